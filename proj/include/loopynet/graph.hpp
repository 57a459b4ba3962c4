#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "loopynet/error.hpp"

namespace loopynet {

using NodeIndex = std::size_t;

enum class Indexing {
  first_appearance,  // node order follows the edge list
  sorted_id,         // node order is lexicographic by id
};

/// Undirected input graph with per-node feature and label vectors.
///
/// A freshly loaded edge list is a "skeleton": features and labels are empty
/// until the node tables are attached. Adjacency lists are sorted, symmetric
/// and free of self-loops.
struct Graph {
  std::vector<std::string> node_ids;
  std::vector<std::vector<NodeIndex>> adjacency;
  std::vector<Eigen::VectorXd> features;
  std::vector<Eigen::VectorXd> labels;
  std::size_t feature_dim = 0;
  std::size_t label_dim = 0;
  Indexing indexing = Indexing::first_appearance;

  std::size_t node_count() const { return node_ids.size(); }

  std::size_t edge_count() const {
    std::size_t degree_sum = 0;
    for (const auto& nbrs : adjacency) degree_sum += nbrs.size();
    return degree_sum / 2;
  }

  bool has_features() const {
    return feature_dim > 0 && features.size() == node_count();
  }
  bool has_labels() const {
    return label_dim > 0 && labels.size() == node_count();
  }

  std::optional<NodeIndex> find(std::string_view id) const {
    for (NodeIndex i = 0; i < node_ids.size(); ++i) {
      if (node_ids[i] == id) return i;
    }
    return std::nullopt;
  }

  NodeIndex index_of(std::string_view id) const {
    if (auto i = find(id)) return *i;
    throw Error(ErrorKind::bounds, "unknown node id: " + std::string(id));
  }
};

/// Γ(v_i): the sorted neighbor list of node i.
inline const std::vector<NodeIndex>& neighbors(const Graph& g, NodeIndex i) {
  if (i >= g.node_count()) {
    throw Error(ErrorKind::bounds, "node index " + std::to_string(i) +
                                       " out of range (node_count=" +
                                       std::to_string(g.node_count()) + ")");
  }
  return g.adjacency[i];
}

/// Adds the undirected edge {a, b}; returns false for self-loops and
/// duplicates. Keeps both lists sorted.
inline bool add_edge(std::vector<std::vector<NodeIndex>>& adjacency,
                     NodeIndex a, NodeIndex b) {
  if (a == b) return false;
  auto& na = adjacency[a];
  auto it = std::lower_bound(na.begin(), na.end(), b);
  if (it != na.end() && *it == b) return false;
  na.insert(it, b);
  auto& nb = adjacency[b];
  nb.insert(std::lower_bound(nb.begin(), nb.end(), a), a);
  return true;
}

/// Reorders nodes so that ids are ascending. All per-node arrays and the
/// adjacency lists are permuted consistently.
inline void canonicalize(Graph& g) {
  const std::size_t n = g.node_count();
  std::vector<NodeIndex> order(n);
  std::iota(order.begin(), order.end(), NodeIndex{0});
  std::sort(order.begin(), order.end(), [&](NodeIndex a, NodeIndex b) {
    return g.node_ids[a] < g.node_ids[b];
  });
  std::vector<NodeIndex> new_index(n);
  for (NodeIndex pos = 0; pos < n; ++pos) new_index[order[pos]] = pos;

  Graph out;
  out.feature_dim = g.feature_dim;
  out.label_dim = g.label_dim;
  out.indexing = Indexing::sorted_id;
  out.node_ids.resize(n);
  out.adjacency.resize(n);
  const bool with_features = g.features.size() == n;
  const bool with_labels = g.labels.size() == n;
  if (with_features) out.features.resize(n);
  if (with_labels) out.labels.resize(n);
  for (NodeIndex old = 0; old < n; ++old) {
    const NodeIndex pos = new_index[old];
    out.node_ids[pos] = std::move(g.node_ids[old]);
    auto& nbrs = out.adjacency[pos];
    nbrs.reserve(g.adjacency[old].size());
    for (NodeIndex j : g.adjacency[old]) nbrs.push_back(new_index[j]);
    std::sort(nbrs.begin(), nbrs.end());
    if (with_features) out.features[pos] = std::move(g.features[old]);
    if (with_labels) out.labels[pos] = std::move(g.labels[old]);
  }
  g = std::move(out);
}

/// Checks the structural invariants; throws a state error on violation.
inline void validate(const Graph& g) {
  const std::size_t n = g.node_count();
  if (g.adjacency.size() != n) {
    throw Error(ErrorKind::state, "adjacency size does not match node count");
  }
  for (NodeIndex i = 0; i < n; ++i) {
    const auto& nbrs = g.adjacency[i];
    for (std::size_t p = 0; p < nbrs.size(); ++p) {
      const NodeIndex j = nbrs[p];
      if (j >= n) throw Error(ErrorKind::state, "neighbor index out of range");
      if (j == i) throw Error(ErrorKind::state, "self-loop on " + g.node_ids[i]);
      if (p > 0 && nbrs[p - 1] >= j) {
        throw Error(ErrorKind::state,
                    "neighbor list of " + g.node_ids[i] + " not strictly ascending");
      }
      if (!std::binary_search(g.adjacency[j].begin(), g.adjacency[j].end(), i)) {
        throw Error(ErrorKind::state, "asymmetric edge " + g.node_ids[i] + " -> " +
                                          g.node_ids[j]);
      }
    }
  }
  if (!g.features.empty()) {
    if (g.features.size() != n) throw Error(ErrorKind::state, "feature table incomplete");
    for (const auto& x : g.features) {
      if (static_cast<std::size_t>(x.size()) != g.feature_dim) {
        throw Error(ErrorKind::state, "feature vector of wrong length");
      }
    }
  }
  if (!g.labels.empty()) {
    if (g.labels.size() != n) throw Error(ErrorKind::state, "label table incomplete");
    for (const auto& y : g.labels) {
      if (static_cast<std::size_t>(y.size()) != g.label_dim) {
        throw Error(ErrorKind::state, "label vector of wrong length");
      }
    }
  }
}

/// BFS hop distances from `source`; unreachable nodes get SIZE_MAX.
inline std::vector<std::size_t> bfs_distances(
    const std::vector<std::vector<NodeIndex>>& adjacency, NodeIndex source) {
  constexpr std::size_t unreached = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(adjacency.size(), unreached);
  std::deque<NodeIndex> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const NodeIndex u = queue.front();
    queue.pop_front();
    for (NodeIndex v : adjacency[u]) {
      if (dist[v] == unreached) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

struct GraphStats {
  std::size_t d_max = 0;
  std::size_t diameter = 0;  // over connected pairs only
  bool connected = true;     // false means the true diameter is infinite
};

inline GraphStats graph_stats(const Graph& g) {
  GraphStats stats;
  for (const auto& nbrs : g.adjacency) stats.d_max = std::max(stats.d_max, nbrs.size());
  for (NodeIndex s = 0; s < g.node_count(); ++s) {
    for (std::size_t d : bfs_distances(g.adjacency, s)) {
      if (d == std::numeric_limits<std::size_t>::max()) {
        stats.connected = false;
      } else {
        stats.diameter = std::max(stats.diameter, d);
      }
    }
  }
  return stats;
}

}  // namespace loopynet
