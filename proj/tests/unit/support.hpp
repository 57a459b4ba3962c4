#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "loopynet/loopynet.hpp"

namespace testing_support {

inline std::string data_path(const std::string& name) {
  return std::string(LOOPYNET_TEST_DATA) + "/" + name;
}

inline std::string golden_path(const std::string& name) {
  return std::string(LOOPYNET_TEST_GOLDEN) + "/" + name;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

/// The six-node example graph with two features and two labels per node.
inline loopynet::Graph six_node_graph() {
  return loopynet::load_graph(data_path("six_node.tsv"), data_path("six_node_features.csv"),
                              data_path("six_node_labels.csv"), loopynet::Indexing::first_appearance);
}

inline loopynet::Graph parse_edges(const std::string& text,
                                   loopynet::Indexing ix = loopynet::Indexing::first_appearance) {
  std::istringstream in(text);
  return loopynet::read_edge_list(in, ix, "<test>").graph;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("loopynet_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

}  // namespace testing_support
