#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loopynet/error.hpp"
#include "loopynet/graph.hpp"
#include "loopynet/rng.hpp"

namespace loopynet {

/// Planted-partition generator settings.
struct SynthSpec {
  std::size_t nodes_per_block = 30;
  std::size_t blocks = 2;
  double p_in = 0.2;
  double p_out = 0.02;
  std::size_t feature_dim = 4;
  std::size_t label_dim = 2;
  double noise = 0.5;
};

/// Planted-partition graph with one-hot block labels.
///
/// Each block draws a prototype feature vector uniformly from [-1, 1]^n; node
/// features are the prototype plus uniform noise in [-noise, noise]. Ids are
/// zero padded so that sorted-id order equals generation order.
inline Graph generate_synthetic(std::uint64_t seed, const SynthSpec& spec) {
  const std::size_t count = spec.nodes_per_block * spec.blocks;
  if (count == 0) throw Error(ErrorKind::config, "synthetic spec produces 0 nodes");
  if (!(spec.p_in >= 0.0 && spec.p_in <= 1.0) || !(spec.p_out >= 0.0 && spec.p_out <= 1.0)) {
    throw Error(ErrorKind::config, "synthetic edge probabilities must lie in [0,1]");
  }
  if (spec.feature_dim < 1 || spec.label_dim < 1) {
    throw Error(ErrorKind::config, "synthetic feature and label dims must be >= 1");
  }
  if (spec.label_dim < spec.blocks) {
    throw Error(ErrorKind::config, "label_dim must be at least the number of blocks");
  }
  if (!(spec.noise >= 0.0)) throw Error(ErrorKind::config, "noise must be >= 0");

  Rng rng(seed);
  const auto n = static_cast<Eigen::Index>(spec.feature_dim);
  std::vector<Eigen::VectorXd> prototypes(spec.blocks, Eigen::VectorXd(n));
  for (auto& proto : prototypes) {
    for (Eigen::Index c = 0; c < n; ++c) proto[c] = rng.uniform(-1.0, 1.0);
  }

  Graph g;
  g.indexing = Indexing::sorted_id;
  g.feature_dim = spec.feature_dim;
  g.label_dim = spec.label_dim;
  const std::size_t width = std::to_string(count).size();
  for (std::size_t i = 0; i < count; ++i) {
    std::string digits = std::to_string(i + 1);
    g.node_ids.push_back("v" + std::string(width - digits.size(), '0') + digits);
  }
  g.adjacency.resize(count);
  for (NodeIndex i = 0; i < count; ++i) {
    for (NodeIndex j = i + 1; j < count; ++j) {
      const bool same = i / spec.nodes_per_block == j / spec.nodes_per_block;
      if (rng.bernoulli(same ? spec.p_in : spec.p_out)) add_edge(g.adjacency, i, j);
    }
  }
  for (NodeIndex i = 0; i < count; ++i) {
    const std::size_t block = i / spec.nodes_per_block;
    Eigen::VectorXd x = prototypes[block];
    for (Eigen::Index c = 0; c < n; ++c) x[c] += rng.uniform(-spec.noise, spec.noise);
    g.features.push_back(std::move(x));
    Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.label_dim));
    y[static_cast<Eigen::Index>(block)] = 1.0;
    g.labels.push_back(std::move(y));
  }
  return g;
}

/// Random connected graph: a random spanning tree over `nodes` nodes plus
/// each remaining pair with probability `p_extra`. Features are uniform in
/// [-1, 1], labels uniform in [0, 1]. Ids are v1..vN in index order.
inline Graph generate_connected(Rng& rng, std::size_t nodes, double p_extra,
                                std::size_t feature_dim, std::size_t label_dim) {
  if (nodes == 0) throw Error(ErrorKind::config, "graph needs at least one node");
  Graph g;
  g.feature_dim = feature_dim;
  g.label_dim = label_dim;
  g.adjacency.resize(nodes);
  for (std::size_t i = 0; i < nodes; ++i) g.node_ids.push_back("v" + std::to_string(i + 1));
  for (NodeIndex i = 1; i < nodes; ++i) add_edge(g.adjacency, i, static_cast<NodeIndex>(rng.below(i)));
  for (NodeIndex i = 0; i < nodes; ++i) {
    for (NodeIndex j = i + 1; j < nodes; ++j) {
      if (rng.bernoulli(p_extra)) add_edge(g.adjacency, i, j);
    }
  }
  for (NodeIndex i = 0; i < nodes; ++i) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(feature_dim));
    for (Eigen::Index c = 0; c < x.size(); ++c) x[c] = rng.uniform(-1.0, 1.0);
    Eigen::VectorXd y(static_cast<Eigen::Index>(label_dim));
    for (Eigen::Index c = 0; c < y.size(); ++c) y[c] = rng.uniform();
    g.features.push_back(std::move(x));
    g.labels.push_back(std::move(y));
  }
  return g;
}

}  // namespace loopynet
