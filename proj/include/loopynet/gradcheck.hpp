#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopynet/backprop.hpp"
#include "loopynet/error.hpp"
#include "loopynet/graph.hpp"
#include "loopynet/model.hpp"
#include "loopynet/rng.hpp"
#include "loopynet/synthetic.hpp"
#include "loopynet/tree.hpp"

namespace loopynet {

inline constexpr double kDefaultFdStep = 1e-5;

/// One scalar entry of the variable set.
struct EntryRef {
  VarTag tag;
  bool bias = false;
  Eigen::Index row = 0;
  Eigen::Index col = 0;  // ignored for biases
};

inline std::string to_string(const EntryRef& e) {
  if (e.bias) return bias_name(e.tag) + "[" + std::to_string(e.row) + "]";
  return weight_name(e.tag) + "[" + std::to_string(e.row) + "," + std::to_string(e.col) + "]";
}

/// All entries of `p`, in tag order, weights before biases, row-major.
inline std::vector<EntryRef> all_entries(const Params& p) {
  std::vector<EntryRef> out;
  for (const VarTag& tag : p.tags()) {
    const Affine& b = p[tag];
    for (Eigen::Index r = 0; r < b.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < b.weight.cols(); ++c) out.push_back({tag, false, r, c});
    for (Eigen::Index r = 0; r < b.bias.size(); ++r) out.push_back({tag, true, r, 0});
  }
  return out;
}

template <class T>
T& entry_ref(BasicParams<T>& p, const EntryRef& e) {
  auto& block = p[e.tag];
  if (e.bias) {
    if (e.row < 0 || e.row >= block.bias.size()) {
      throw Error(ErrorKind::bounds, "entry " + to_string(e) + " out of range");
    }
    return block.bias[e.row];
  }
  if (e.row < 0 || e.row >= block.weight.rows() || e.col < 0 || e.col >= block.weight.cols()) {
    throw Error(ErrorKind::bounds, "entry " + to_string(e) + " out of range");
  }
  return block.weight(e.row, e.col);
}

inline double entry_value(const Params& p, const EntryRef& e) {
  return entry_ref(const_cast<Params&>(p), e);
}

/// Central difference (E(θ+h) - E(θ-h)) / 2h of the tree-unrolled root loss
/// with only `entry` perturbed. Both evaluations run the forward pass in
/// extended precision so that round-off stays far below the step's
/// truncation error.
inline double fd_gradient(const SpanTree& tree, const Params& p, const Graph& g,
                          const Eigen::VectorXd& target, LossKind loss, const EntryRef& entry,
                          double h_step = kDefaultFdStep) {
  using Wide = long double;
  if (!(h_step > 0.0)) throw Error(ErrorKind::config, "h_step must be positive");
  BasicParams<Wide> wide = p.cast<Wide>();
  Wide& slot = entry_ref(wide, entry);
  const Wide base = slot;
  const Vec<Wide> wide_target = target.cast<Wide>();
  slot = base + Wide(h_step);
  const Wide plus = tree_loss<Wide>(tree, wide, g, wide_target, loss);
  slot = base - Wide(h_step);
  const Wide minus = tree_loss<Wide>(tree, wide, g, wide_target, loss);
  return static_cast<double>((plus - minus) / (Wide(2) * Wide(h_step)));
}

/// Same, building the g-hop tree at the output neuron of `root` and using
/// the node's own label as target.
inline double fd_gradient(const Graph& g, NodeIndex root, const Params& p, int hops,
                          const EntryRef& entry, double h_step = kDefaultFdStep,
                          LossKind loss = LossKind::mse) {
  if (!g.has_labels()) throw Error(ErrorKind::state, "graph has no labels");
  const ModelGraph mg(g, p.dims().hidden);
  const SpanTree tree = build_tree(mg, g, NeuronId::output(root), hops);
  return fd_gradient(tree, p, g, g.labels.at(root), loss, entry, h_step);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

// ---------------------------------------------------------------------------
// Randomized suite

struct GradCheckSpec {
  enum class Init { mixed, zeros, uniform };

  std::size_t cases = 100;
  std::uint64_t seed = 1;
  double tol = 1e-6;
  double h_step = kDefaultFdStep;
  std::size_t max_nodes = 8;
  std::vector<int> hops{1, 2, 3};
  std::vector<int> depths{1, 2};
  Init init = Init::mixed;
  LossKind loss = LossKind::mse;
  unsigned jobs = 1;
  /// Test seam: may modify the reverse-sweep gradients of a case before the
  /// comparison.
  std::function<void(std::size_t, GradAccum&)> tamper;
};

/// A fully specified randomized instance.
struct CheckInstance {
  std::uint64_t seed = 0;
  Graph graph;
  int depth = 1;
  int hops = 1;
  bool zeros = false;
  Params params;
  NodeIndex root = 0;
};

inline CheckInstance make_check_instance(const GradCheckSpec& spec, std::size_t case_index) {
  CheckInstance inst;
  inst.seed = mix_seed(spec.seed, case_index);
  Rng rng(inst.seed);
  const std::size_t nodes = rng.between(2, std::max<std::size_t>(2, spec.max_nodes));
  const std::size_t n = rng.between(1, 3);
  const std::size_t d = rng.between(1, 3);
  inst.graph = generate_connected(rng, nodes, 0.3, n, d);
  inst.depth = spec.depths.at(rng.below(spec.depths.size()));
  inst.hops = spec.hops.at(rng.below(spec.hops.size()));
  Dims dims{n, {}, d};
  for (int l = 0; l < inst.depth; ++l) dims.hidden.push_back(rng.between(1, 3));
  switch (spec.init) {
    case GradCheckSpec::Init::zeros: inst.zeros = true; break;
    case GradCheckSpec::Init::uniform: inst.zeros = false; break;
    case GradCheckSpec::Init::mixed: inst.zeros = case_index % 5 == 0; break;
  }
  const double scale = rng.uniform(0.2, 1.5);
  inst.params = init_params(dims, rng.next(),
                            inst.zeros ? InitScheme::zeros() : InitScheme::uniform(scale));
  inst.root = static_cast<NodeIndex>(rng.below(nodes));
  return inst;
}

struct GradCheckFailure {
  std::uint64_t seed = 0;
  std::string tag;
  std::vector<Eigen::Index> index;
  double got = 0.0;
  double want = 0.0;
};

struct GradCheckCase {
  std::uint64_t seed = 0;
  std::size_t nodes = 0;
  int depth = 0;
  int hops = 0;
  bool zeros = false;
  std::size_t tree_size = 0;
  std::size_t prop_calls = 0;
  std::size_t d_max = 0;
  std::uint64_t prop_call_bound = 0;
  std::size_t entries = 0;
  double max_rel_err = 0.0;
  bool absent_tags_zero = true;  // tags outside the tree have zero gradient
};

struct GradCheckReport {
  std::size_t cases = 0;
  std::size_t entries = 0;
  double max_rel_err = 0.0;
  std::vector<GradCheckFailure> failures;
  std::vector<GradCheckCase> details;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json doc;
    doc["cases"] = cases;
    doc["entries"] = entries;
    doc["max_rel_err"] = max_rel_err;
    auto& f = doc["failures"] = nlohmann::ordered_json::array();
    for (const auto& fail : failures) {
      f.push_back({{"seed", fail.seed},
                   {"tag", fail.tag},
                   {"index", fail.index},
                   {"got", fail.got},
                   {"want", fail.want}});
    }
    return doc;
  }
};

struct CaseOutcome {
  GradCheckCase summary;
  std::vector<GradCheckFailure> failures;
};

/// Checks every entry of every variable for one instance.
inline CaseOutcome check_instance(const CheckInstance& inst, const GradCheckSpec& spec,
                                  std::size_t case_index) {
  CaseOutcome out;
  const Graph& g = inst.graph;
  const ModelGraph mg(g, inst.params.dims().hidden);
  const SpanTree tree = build_tree(mg, g, NeuronId::output(inst.root), inst.hops);
  const Eigen::VectorXd& target = g.labels[inst.root];

  const auto tape = forward_tree(tree, inst.params, g);
  GradAccum acc = prop_gradients(tree, tape, inst.params, target, spec.loss);
  if (spec.tamper) spec.tamper(case_index, acc);

  GradCheckCase& s = out.summary;
  s.seed = inst.seed;
  s.nodes = g.node_count();
  s.depth = inst.depth;
  s.hops = inst.hops;
  s.zeros = inst.zeros;
  s.tree_size = tree.size();
  s.prop_calls = acc.prop_calls;
  s.d_max = graph_stats(g).d_max;
  s.prop_call_bound = prop_call_bound(s.d_max, inst.hops);

  const auto used = tree.variable_tags();
  for (const VarTag& tag : inst.params.tags()) {
    if (!used.count(tag) && !acc.is_zero(tag)) s.absent_tags_zero = false;
  }

  for (const EntryRef& e : all_entries(inst.params)) {
    const double got = entry_value(acc.grads, e);
    const double want = fd_gradient(tree, inst.params, g, target, spec.loss, e, spec.h_step);
    const double err = relative_error(got, want);
    ++s.entries;
    s.max_rel_err = std::max(s.max_rel_err, err);
    if (!(err < spec.tol)) {
      GradCheckFailure f{inst.seed, e.bias ? bias_name(e.tag) : weight_name(e.tag), {e.row}, got,
                         want};
      if (!e.bias) f.index.push_back(e.col);
      out.failures.push_back(std::move(f));
    }
  }
  return out;
}

/// Runs the randomized oracle suite: reverse-sweep gradients against central
/// differences, relative error |a-b| / max(1e-8, |a|, |b|).
inline GradCheckReport grad_check(const GradCheckSpec& spec) {
  std::vector<CaseOutcome> outcomes(spec.cases);
  auto run = [&](std::size_t first, std::size_t stride) {
    for (std::size_t c = first; c < spec.cases; c += stride) {
      outcomes[c] = check_instance(make_check_instance(spec, c), spec, c);
    }
  };
  const unsigned jobs = std::max(1u, spec.jobs);
  if (jobs == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> workers;
    for (unsigned j = 0; j < jobs; ++j) workers.emplace_back(run, j, jobs);
    for (auto& w : workers) w.join();
  }

  GradCheckReport report;
  report.cases = spec.cases;
  for (auto& o : outcomes) {
    report.entries += o.summary.entries;
    report.max_rel_err = std::max(report.max_rel_err, o.summary.max_rel_err);
    for (auto& f : o.failures) report.failures.push_back(std::move(f));
    report.details.push_back(o.summary);
  }
  return report;
}

}  // namespace loopynet
