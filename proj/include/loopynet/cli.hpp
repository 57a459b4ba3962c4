#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopynet/backprop.hpp"
#include "loopynet/error.hpp"
#include "loopynet/gradcheck.hpp"
#include "loopynet/graph.hpp"
#include "loopynet/graph_io.hpp"
#include "loopynet/model.hpp"
#include "loopynet/params_json.hpp"
#include "loopynet/synthetic.hpp"
#include "loopynet/trainer.hpp"
#include "loopynet/tree.hpp"

namespace loopynet {

// Config document, every section optional:
//
//   {"paths":     {"edges", "features", "labels", "params_in", "params_out", "log"},
//    "indexing":  "first_appearance" | "sorted_id",
//    "model":     {"k", "hidden_dims", "g_hops", "init": {"scheme", "scale", "seed"}},
//    "optimizer": {"algorithm", "lr_weight", "lr_bias", "beta1", "beta2", "epsilon", "max_norm"},
//    "training":  {"max_epochs", "seed", "loss", "batch", "jobs", "tolerance", "patience"},
//    "eval":      {"k_folds", "seed", "test_nodes"},
//    "synth":     {"seed", "nodes_per_block", "blocks", "p_in", "p_out",
//                  "feature_dim", "label_dim", "noise"},
//    "gradcheck": {"cases", "seed", "tol", "h_step", "max_nodes", "jobs"}}
//
// Relative paths resolve against the config file's directory.

struct PathsConfig {
  std::string edges, features, labels, params_in, params_out, log;
};

struct ModelConfig {
  int k = 1;
  std::vector<std::size_t> hidden_dims;  // empty: 8 per layer
  int g_hops = 2;
  InitScheme init = InitScheme::uniform(0.5);
  std::uint64_t init_seed = 1;
};

struct EvalConfig {
  std::size_t k_folds = 5;
  std::uint64_t seed = 11;
  std::vector<std::string> test_nodes;  // empty: every node
};

struct RunConfig {
  PathsConfig paths;
  Indexing indexing = Indexing::first_appearance;
  ModelConfig model;
  OptConfig optimizer;
  TrainConfig training;
  EvalConfig eval;
  std::uint64_t synth_seed = 7;
  SynthSpec synth;
  GradCheckSpec gradcheck;

  std::vector<std::size_t> hidden_dims() const {
    if (!model.hidden_dims.empty()) return model.hidden_dims;
    return std::vector<std::size_t>(static_cast<std::size_t>(std::max(model.k, 0)), 8);
  }
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& where,
                           const std::set<std::string>& known) {
  if (!obj.is_object()) throw Error(ErrorKind::config, where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) throw Error(ErrorKind::config, "unknown key " + where + "." + key);
  }
}

template <class T>
void read_field(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::config, where + "." + key + " has the wrong type");
  }
}

inline std::string resolve(const std::string& path, const std::filesystem::path& base) {
  if (path.empty()) return path;
  const std::filesystem::path p(path);
  return p.is_absolute() ? path : (base / p).lexically_normal().string();
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "cross_entropy") return LossKind::cross_entropy;
  throw Error(ErrorKind::config, "unknown loss: " + s);
}

}  // namespace detail

/// Parses and range-checks a config document. No file is touched.
inline RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base = {}) {
  using detail::read_field;
  using detail::reject_unknown;
  RunConfig c;
  reject_unknown(doc, "config",
                 {"paths", "indexing", "model", "optimizer", "training", "eval", "synth",
                  "gradcheck"});

  if (doc.contains("paths")) {
    const auto& s = doc["paths"];
    reject_unknown(s, "paths", {"edges", "features", "labels", "params_in", "params_out", "log"});
    read_field(s, "edges", c.paths.edges, "paths");
    read_field(s, "features", c.paths.features, "paths");
    read_field(s, "labels", c.paths.labels, "paths");
    read_field(s, "params_in", c.paths.params_in, "paths");
    read_field(s, "params_out", c.paths.params_out, "paths");
    read_field(s, "log", c.paths.log, "paths");
    for (std::string* p : {&c.paths.edges, &c.paths.features, &c.paths.labels,
                           &c.paths.params_in, &c.paths.params_out, &c.paths.log}) {
      *p = detail::resolve(*p, base);
    }
  }

  if (doc.contains("indexing")) {
    std::string s;
    read_field(doc, "indexing", s, "config");
    if (s == "first_appearance") c.indexing = Indexing::first_appearance;
    else if (s == "sorted_id") c.indexing = Indexing::sorted_id;
    else throw Error(ErrorKind::config, "unknown indexing: " + s);
  }

  if (doc.contains("model")) {
    const auto& s = doc["model"];
    reject_unknown(s, "model", {"k", "hidden_dims", "g_hops", "init"});
    read_field(s, "k", c.model.k, "model");
    read_field(s, "hidden_dims", c.model.hidden_dims, "model");
    read_field(s, "g_hops", c.model.g_hops, "model");
    if (s.contains("init")) {
      const auto& i = s["init"];
      reject_unknown(i, "model.init", {"scheme", "scale", "seed"});
      std::string scheme = "uniform";
      double scale = c.model.init.scale;
      read_field(i, "scheme", scheme, "model.init");
      read_field(i, "scale", scale, "model.init");
      read_field(i, "seed", c.model.init_seed, "model.init");
      if (scheme == "zeros") c.model.init = InitScheme::zeros();
      else if (scheme == "uniform") c.model.init = InitScheme::uniform(scale);
      else throw Error(ErrorKind::config, "unknown init scheme: " + scheme);
    }
  }

  if (doc.contains("optimizer")) {
    const auto& s = doc["optimizer"];
    reject_unknown(s, "optimizer",
                   {"algorithm", "lr_weight", "lr_bias", "beta1", "beta2", "epsilon", "max_norm"});
    std::string algo = "sgd";
    read_field(s, "algorithm", algo, "optimizer");
    if (algo == "sgd") c.optimizer = OptConfig::sgd();
    else if (algo == "adam") c.optimizer = OptConfig::adam();
    else throw Error(ErrorKind::config, "unknown optimizer: " + algo);
    read_field(s, "lr_weight", c.optimizer.lr_weight, "optimizer");
    read_field(s, "lr_bias", c.optimizer.lr_bias, "optimizer");
    read_field(s, "beta1", c.optimizer.beta1, "optimizer");
    read_field(s, "beta2", c.optimizer.beta2, "optimizer");
    read_field(s, "epsilon", c.optimizer.epsilon, "optimizer");
    read_field(s, "max_norm", c.optimizer.max_norm, "optimizer");
  }

  if (doc.contains("training")) {
    const auto& s = doc["training"];
    reject_unknown(s, "training",
                   {"max_epochs", "seed", "loss", "batch", "jobs", "tolerance", "patience"});
    read_field(s, "max_epochs", c.training.max_epochs, "training");
    read_field(s, "seed", c.training.seed, "training");
    std::string loss = "mse";
    read_field(s, "loss", loss, "training");
    c.training.epoch.loss = detail::parse_loss(loss);
    read_field(s, "batch", c.training.epoch.batch, "training");
    read_field(s, "jobs", c.training.epoch.jobs, "training");
    read_field(s, "tolerance", c.training.tolerance, "training");
    read_field(s, "patience", c.training.patience, "training");
  }

  if (doc.contains("eval")) {
    const auto& s = doc["eval"];
    reject_unknown(s, "eval", {"k_folds", "seed", "test_nodes"});
    read_field(s, "k_folds", c.eval.k_folds, "eval");
    read_field(s, "seed", c.eval.seed, "eval");
    read_field(s, "test_nodes", c.eval.test_nodes, "eval");
  }

  if (doc.contains("synth")) {
    const auto& s = doc["synth"];
    reject_unknown(s, "synth",
                   {"seed", "nodes_per_block", "blocks", "p_in", "p_out", "feature_dim",
                    "label_dim", "noise"});
    read_field(s, "seed", c.synth_seed, "synth");
    read_field(s, "nodes_per_block", c.synth.nodes_per_block, "synth");
    read_field(s, "blocks", c.synth.blocks, "synth");
    read_field(s, "p_in", c.synth.p_in, "synth");
    read_field(s, "p_out", c.synth.p_out, "synth");
    read_field(s, "feature_dim", c.synth.feature_dim, "synth");
    read_field(s, "label_dim", c.synth.label_dim, "synth");
    read_field(s, "noise", c.synth.noise, "synth");
  }

  if (doc.contains("gradcheck")) {
    const auto& s = doc["gradcheck"];
    reject_unknown(s, "gradcheck", {"cases", "seed", "tol", "h_step", "max_nodes", "jobs"});
    read_field(s, "cases", c.gradcheck.cases, "gradcheck");
    read_field(s, "seed", c.gradcheck.seed, "gradcheck");
    read_field(s, "tol", c.gradcheck.tol, "gradcheck");
    read_field(s, "h_step", c.gradcheck.h_step, "gradcheck");
    read_field(s, "max_nodes", c.gradcheck.max_nodes, "gradcheck");
    read_field(s, "jobs", c.gradcheck.jobs, "gradcheck");
  }
  c.training.optimizer = c.optimizer;
  c.training.hops = c.model.g_hops;
  return c;
}

inline RunConfig load_config(const std::string& path) {
  if (path.empty()) return parse_config(nlohmann::json::object());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "file not found: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, path + ": " + e.what());
  }
  return parse_config(doc, std::filesystem::path(path).parent_path());
}

/// Checks shared by the training commands.
inline void validate_model_config(const RunConfig& c) {
  if (c.model.k < 1) {
    throw Error(ErrorKind::config, "model.k must be >= 1, got " + std::to_string(c.model.k));
  }
  if (!c.model.hidden_dims.empty() &&
      c.model.hidden_dims.size() != static_cast<std::size_t>(c.model.k)) {
    throw Error(ErrorKind::config, "model.hidden_dims must list k widths");
  }
  for (std::size_t m : c.hidden_dims()) {
    if (m < 1) throw Error(ErrorKind::config, "hidden widths must be >= 1");
  }
  if (c.model.g_hops < 1) throw Error(ErrorKind::config, "model.g_hops must be >= 1");
  if (c.model.init.kind == InitScheme::Kind::uniform && !(c.model.init.scale > 0.0)) {
    throw Error(ErrorKind::config, "model.init.scale must be positive");
  }
  const auto& o = c.optimizer;
  if (!(o.lr_weight >= 0.0) || !(o.lr_bias >= 0.0)) {
    throw Error(ErrorKind::config, "learning rates must be non-negative");
  }
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    throw Error(ErrorKind::config, "Adam betas must lie in [0, 1)");
  }
  if (!(o.epsilon > 0.0) || !(o.max_norm >= 0.0)) {
    throw Error(ErrorKind::config, "epsilon must be positive and max_norm non-negative");
  }
  if (c.training.max_epochs < 1) throw Error(ErrorKind::config, "training.max_epochs must be >= 1");
  if (!(c.training.tolerance >= 0.0)) throw Error(ErrorKind::config, "tolerance must be >= 0");
}

inline void require_path(const std::string& path, const char* name) {
  if (path.empty()) throw Error(ErrorKind::config, std::string("paths.") + name + " is required");
}

inline void require_writable_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw Error(ErrorKind::io, "output directory does not exist: " + parent.string());
  }
}

inline Graph load_config_graph(const RunConfig& c, bool need_labels) {
  require_path(c.paths.edges, "edges");
  require_path(c.paths.features, "features");
  if (need_labels) require_path(c.paths.labels, "labels");
  return load_graph(c.paths.edges, c.paths.features, c.paths.labels, c.indexing);
}

inline Dims config_dims(const RunConfig& c, const Graph& g) {
  return Dims{g.feature_dim, c.hidden_dims(), g.label_dim};
}

inline void check_params_fit(const Params& p, const Graph& g) {
  if (p.dims().input != g.feature_dim) {
    throw Error(ErrorKind::shape, "params expect feature dim " + std::to_string(p.dims().input) +
                                      ", graph has " + std::to_string(g.feature_dim));
  }
  if (g.has_labels() && p.dims().output != g.label_dim) {
    throw Error(ErrorKind::shape, "params expect label dim " + std::to_string(p.dims().output) +
                                      ", graph has " + std::to_string(g.label_dim));
  }
}

inline std::vector<NodeIndex> config_test_nodes(const RunConfig& c, const Graph& g) {
  if (c.eval.test_nodes.empty()) return all_nodes(g);
  std::vector<NodeIndex> out;
  for (const auto& id : c.eval.test_nodes) out.push_back(g.index_of(id));
  return out;
}

// ---------------------------------------------------------------------------
// Commands. Each returns a process exit code; module errors are reported on
// `err` as "error: <kind>: <message>".

struct CommandIo {
  std::ostream& out;
  std::ostream& err;
};

template <class Fn>
int run_command(CommandIo io, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    io.err << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return 4;
  }
}

/// Trains on every node (or on the configured non-test nodes when
/// eval.test_nodes is set) and writes the params file and epoch log.
inline int cmd_train(const RunConfig& c, CommandIo io) {
  return run_command(io, [&] {
    validate_model_config(c);
    require_path(c.paths.params_out, "params_out");
    require_writable_parent(c.paths.params_out);
    if (!c.paths.log.empty()) require_writable_parent(c.paths.log);
    const Graph g = load_config_graph(c, true);

    std::vector<NodeIndex> train_nodes = all_nodes(g);
    if (!c.eval.test_nodes.empty()) {
      const auto test = config_test_nodes(c, g);
      const std::set<NodeIndex> held(test.begin(), test.end());
      std::erase_if(train_nodes, [&](NodeIndex i) { return held.count(i) > 0; });
    }
    if (train_nodes.empty()) throw Error(ErrorKind::config, "no training nodes left");

    const Params init = init_params(config_dims(c, g), c.model.init_seed, c.model.init);
    std::ostringstream log;
    auto on_epoch = [&](const EpochLog& e) {
      const nlohmann::ordered_json line{
          {"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"wall_ms", e.wall_ms}};
      log << line.dump() << '\n';
      io.out << line.dump() << '\n';
    };
    const TrainResult result = train(g, init, c.training, train_nodes, on_epoch);
    save_params(c.paths.params_out, result.params);
    if (!c.paths.log.empty()) {
      std::ofstream f(c.paths.log, std::ios::binary | std::ios::trunc);
      if (!f) throw Error(ErrorKind::io, "cannot write: " + c.paths.log);
      f << log.str();
    }
    return 0;
  });
}

/// Scores a trained params file on the test nodes, or with `cv` runs the
/// k-fold protocol, retraining from the configured init on each fold.
inline int cmd_eval(const RunConfig& c, bool cv, bool table, CommandIo io) {
  return run_command(io, [&] {
    if (c.model.g_hops < 1) throw Error(ErrorKind::config, "model.g_hops must be >= 1");
    if (cv) {
      validate_model_config(c);
      if (c.eval.k_folds < 2) throw Error(ErrorKind::config, "eval.k_folds must be >= 2");
    }
    require_path(c.paths.params_in, "params_in");
    const Params trained = load_params(c.paths.params_in);
    const Graph g = load_config_graph(c, true);
    check_params_fit(trained, g);

    MetricsReport report;
    if (cv) {
      const Params init = init_params(config_dims(c, g), c.model.init_seed, c.model.init);
      report = cross_validate(g, init, c.training, c.eval.k_folds, c.eval.seed);
    } else {
      report = make_report({evaluate(g, trained, config_test_nodes(c, g), c.model.g_hops)});
    }
    if (table) {
      io.out << report_table(report);
    } else {
      io.out << report_to_json(report).dump() << '\n';
    }
    return 0;
  });
}

/// Dumps the g-tree rooted at y of node `root_id`.
inline int cmd_tree(const RunConfig& c, const std::string& root_id, int hops, CommandIo io) {
  return run_command(io, [&] {
    if (c.model.k < 1) throw Error(ErrorKind::config, "model.k must be >= 1");
    if (hops < 1) throw Error(ErrorKind::config, "g must be >= 1");
    if (root_id.empty()) throw Error(ErrorKind::config, "--root is required");
    require_path(c.paths.edges, "edges");
    Graph g = load_edge_list(c.paths.edges, c.indexing).graph;
    if (!c.paths.features.empty()) g = load_node_table(c.paths.features, std::move(g), TableKind::features);
    const NodeIndex root = g.index_of(root_id);
    const ModelGraph mg = build_model_graph(g, c.model.k, c.hidden_dims());
    const SpanTree tree = build_tree(mg, g, NeuronId::output(root), hops);
    io.out << tree_to_json(tree, g).dump() << '\n';
    return 0;
  });
}

/// Without params: the randomized oracle suite. With paths.params_in and a
/// labelled graph: every entry checked on the tree of every node.
inline int cmd_gradcheck(const RunConfig& c, CommandIo io) {
  return run_command(io, [&] {
    const GradCheckSpec& spec = c.gradcheck;
    if (!(spec.tol > 0.0) || !(spec.h_step > 0.0)) {
      throw Error(ErrorKind::config, "gradcheck tol and h_step must be positive");
    }
    if (spec.cases < 1 || spec.max_nodes < 2) {
      throw Error(ErrorKind::config, "gradcheck needs cases >= 1 and max_nodes >= 2");
    }
    GradCheckReport report;
    if (!c.paths.params_in.empty()) {
      if (c.model.g_hops < 1) throw Error(ErrorKind::config, "model.g_hops must be >= 1");
      const Params p = load_params(c.paths.params_in);
      const Graph g = load_config_graph(c, true);
      check_params_fit(p, g);
      report.cases = g.node_count();
      for (NodeIndex i = 0; i < g.node_count(); ++i) {
        CheckInstance inst;
        inst.seed = i;
        inst.graph = g;
        inst.depth = p.depth();
        inst.hops = c.model.g_hops;
        inst.params = p;
        inst.root = i;
        auto outcome = check_instance(inst, spec, i);
        report.entries += outcome.summary.entries;
        report.max_rel_err = std::max(report.max_rel_err, outcome.summary.max_rel_err);
        for (auto& f : outcome.failures) report.failures.push_back(std::move(f));
      }
    } else {
      report = grad_check(spec);
    }
    io.out << report.to_json().dump() << '\n';
    return report.failures.empty() ? 0 : exit_code(ErrorKind::numeric);
  });
}

/// Writes edges.tsv, features.csv and labels.csv into `out_dir`.
inline int cmd_synth(const RunConfig& c, const std::string& out_dir, CommandIo io) {
  return run_command(io, [&] {
    if (out_dir.empty()) throw Error(ErrorKind::config, "--out is required");
    const Graph g = generate_synthetic(c.synth_seed, c.synth);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) {
      throw Error(ErrorKind::io, "cannot create output directory: " + out_dir);
    }
    auto write = [&](const std::string& name, auto&& body) {
      const std::string path = (fs::path(out_dir) / name).string();
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      if (!f) throw Error(ErrorKind::io, "cannot write: " + path);
      body(f);
      if (!f) throw Error(ErrorKind::io, "write failed: " + path);
      return path;
    };
    nlohmann::ordered_json files;
    files["edges"] = write("edges.tsv", [&](std::ostream& f) { write_edge_list(f, g); });
    files["features"] = write("features.csv",
                              [&](std::ostream& f) { write_node_table(f, g, TableKind::features); });
    files["labels"] = write("labels.csv",
                            [&](std::ostream& f) { write_node_table(f, g, TableKind::labels); });
    io.out << nlohmann::ordered_json{{"nodes", g.node_count()}, {"edges", g.edge_count()},
                                     {"files", files}}
                  .dump()
           << '\n';
    return 0;
  });
}

}  // namespace loopynet
