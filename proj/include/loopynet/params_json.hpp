#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "loopynet/error.hpp"
#include "loopynet/model.hpp"

namespace loopynet {

// Layout:
//   {"dims": {"input": n, "hidden": [m1, ...], "output": d},
//    "W_x": {"rows": r, "cols": c, "data": [row-major]}, "b_x": [...], ...}
// Doubles are written in shortest round-trip form, so save/load is bit exact.

inline nlohmann::ordered_json params_to_json(const Params& p) {
  nlohmann::ordered_json doc;
  doc["dims"] = {{"input", p.dims().input},
                 {"hidden", p.dims().hidden},
                 {"output", p.dims().output}};
  for (const VarTag& tag : p.tags()) {
    const Affine& block = p[tag];
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(block.weight.size()));
    for (Eigen::Index r = 0; r < block.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < block.weight.cols(); ++c) data.push_back(block.weight(r, c));
    doc[weight_name(tag)] = {{"rows", block.weight.rows()},
                             {"cols", block.weight.cols()},
                             {"data", std::move(data)}};
    doc[bias_name(tag)] = std::vector<double>(block.bias.data(),
                                              block.bias.data() + block.bias.size());
  }
  return doc;
}

inline Params params_from_json(const nlohmann::json& doc) {
  try {
    const auto& d = doc.at("dims");
    Dims dims;
    dims.input = d.at("input").get<std::size_t>();
    dims.hidden = d.at("hidden").get<std::vector<std::size_t>>();
    dims.output = d.at("output").get<std::size_t>();
    Params p(dims);
    for (const VarTag& tag : p.tags()) {
      Affine& block = p[tag];
      const auto& w = doc.at(weight_name(tag));
      const auto rows = w.at("rows").get<Eigen::Index>();
      const auto cols = w.at("cols").get<Eigen::Index>();
      const auto data = w.at("data").get<std::vector<double>>();
      if (rows != block.weight.rows() || cols != block.weight.cols() ||
          static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw Error(ErrorKind::shape, weight_name(tag) + " has shape inconsistent with dims");
      }
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) block.weight(r, c) = data[static_cast<std::size_t>(r * cols + c)];
      const auto bias = doc.at(bias_name(tag)).get<std::vector<double>>();
      if (static_cast<Eigen::Index>(bias.size()) != block.bias.size()) {
        throw Error(ErrorKind::shape, bias_name(tag) + " has length inconsistent with dims");
      }
      for (Eigen::Index r = 0; r < block.bias.size(); ++r) block.bias[r] = bias[static_cast<std::size_t>(r)];
    }
    if (!p.all_finite()) throw Error(ErrorKind::numeric, "params contain non-finite entries");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("malformed params document: ") + e.what());
  }
}

inline std::string params_to_string(const Params& p) { return params_to_json(p).dump(); }

inline void save_params(const std::string& path, const Params& p) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write: " + path);
  out << params_to_string(p) << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed: " + path);
}

inline Params load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "file not found: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(buffer.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, path + ": " + e.what());
  }
  return params_from_json(doc);
}

}  // namespace loopynet
