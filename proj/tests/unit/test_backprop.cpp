#include <gtest/gtest.h>

#include "support.hpp"

using namespace loopynet;
using namespace testing_support;

namespace {

struct SixNodeCase {
  Graph g = six_node_graph();
  ModelGraph mg{g, {3}};
  SpanTree tree = build_tree(mg, g, NeuronId::output(g.index_of("v1")), 3);
  Params p = init_params(Dims{2, {3}, 2}, 5, InitScheme::uniform(0.8));
  NodeIndex v(int i) const { return g.index_of("v" + std::to_string(i)); }
};

// The g=3 tree at y_1 written out by hand.
Eigen::VectorXd unrolled_y1(const SixNodeCase& c) {
  const Affine& wx = c.p[VarTag::input()];
  const Affine& wh = c.p[VarTag::intra(1)];
  const Affine& wy = c.p[VarTag::output()];
  auto sig = [](const Eigen::VectorXd& z) { return activation<double>(z); };
  auto x = [&](int i) { return c.g.features[c.v(i)]; };
  const Eigen::VectorXd h5 = sig(wx.weight * x(5) + wx.bias);
  const Eigen::VectorXd h2 = sig(wx.weight * x(2) + wx.bias);
  const Eigen::VectorXd h3 = sig(wx.weight * x(3) + wx.bias);
  const Eigen::VectorXd h4 = sig(wx.weight * x(4) + wx.bias + wh.weight * h5 + wh.bias);
  const Eigen::VectorXd h1 = sig(wx.weight * x(1) + wx.bias + wh.weight * h2 + wh.bias +
                                 wh.weight * h3 + wh.bias + wh.weight * h4 + wh.bias);
  return sig(wy.weight * h1 + wy.bias);
}

}  // namespace

TEST(Forward, MatchesHandUnrolledThreeHopTree) {
  SixNodeCase c;
  const auto tape = forward_tree(c.tree, c.p, c.g);
  EXPECT_LT((tape.root_value() - unrolled_y1(c)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Forward, ZeroParamsGiveOneHalfEverywhere) {
  SixNodeCase c;
  const Params z(Dims{2, {3}, 2});
  const auto tape = forward_tree(c.tree, z, c.g);
  for (std::size_t p = 0; p < c.tree.size(); ++p) {
    if (c.tree.node(p).neuron.is_input()) continue;
    EXPECT_TRUE(tape.entries[p].value.isApproxToConstant(0.5));
  }
}

TEST(Forward, DeepLeafChain) {
  // Two layers, g=2 at y_6: y_6 <- h2_6 <- {h1_6, h2_5}; h2_5 is a leaf.
  SixNodeCase c;
  const ModelGraph mg(c.g, {2, 3});
  const Params p = init_params(Dims{2, {2, 3}, 2}, 3, InitScheme::uniform(1.0));
  const SpanTree t = build_tree(mg, c.g, NeuronId::output(c.v(6)), 2);
  const auto tape = forward_tree(t, p, c.g);
  const int leaf = *t.position_of(NeuronId::hidden(2, c.v(5)));
  const auto& e = tape.entries[static_cast<std::size_t>(leaf)];
  ASSERT_EQ(e.chain.size(), 2u);
  const Eigen::VectorXd h1 =
      activation<double>(p[VarTag::input()].weight * c.g.features[c.v(5)] + p[VarTag::input()].bias);
  const Eigen::VectorXd h2 =
      activation<double>(p[VarTag::inter(2)].weight * h1 + p[VarTag::inter(2)].bias);
  EXPECT_LT((e.value - h2).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(t.variable_tags(), (std::set<VarTag>{VarTag::input(), VarTag::intra(2),
                                                 VarTag::inter(2), VarTag::output()}));
}

TEST(Forward, ShapeAndStateErrors) {
  SixNodeCase c;
  auto kind = [](const std::function<void()>& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::io;
  };
  const Params deep(Dims{2, {3, 3}, 2});
  EXPECT_EQ(kind([&] { forward_tree(c.tree, deep, c.g); }), ErrorKind::shape);
  const Params wide(Dims{5, {3}, 2});
  EXPECT_EQ(kind([&] { forward_tree(c.tree, wide, c.g); }), ErrorKind::shape);
  const SpanTree bare = extract_tree(c.mg, extract_subgraph(c.mg, NeuronId::output(0), 3));
  EXPECT_EQ(kind([&] { forward_tree(bare, c.p, c.g); }), ErrorKind::state);
}

TEST(Backward, MatchesFiniteDifferencesOnThreeHopTree) {
  SixNodeCase c;
  const Eigen::VectorXd& target = c.g.labels[c.v(1)];
  for (LossKind loss : {LossKind::mse, LossKind::cross_entropy}) {
    const auto tape = forward_tree(c.tree, c.p, c.g);
    const GradAccum acc = prop_gradients(c.tree, tape, c.p, target, loss);
    for (const EntryRef& e : all_entries(c.p)) {
      const double want = fd_gradient(c.tree, c.p, c.g, target, loss, e);
      EXPECT_LT(relative_error(entry_value(acc.grads, e), want), 1e-6) << to_string(e);
    }
  }
}

TEST(Backward, PropCallsEqualTreeLinks) {
  SixNodeCase c;
  const auto tape = forward_tree(c.tree, c.p, c.g);
  const GradAccum acc = prop_gradients(c.tree, tape, c.p, c.g.labels[c.v(1)], LossKind::mse);
  EXPECT_EQ(acc.prop_calls, c.tree.size() - 1);
  EXPECT_EQ(acc.prop_calls, 9u);
  EXPECT_EQ(acc.chain_steps, 1u);  // the h_5 leaf
}

TEST(Backward, ClosedFormOutputLayer) {
  SixNodeCase c;
  const auto tape = forward_tree(c.tree, c.p, c.g);
  const Eigen::VectorXd& t = c.g.labels[c.v(1)];
  const GradAccum acc = prop_gradients(c.tree, tape, c.p, t, LossKind::mse);
  const OutputGrads cf = output_layer_grads_closed_form(c.tree, tape, t);
  EXPECT_LE((acc[VarTag::output()].weight - cf.weight).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((acc[VarTag::output()].bias - cf.bias).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, TagsOutsideTheTreeGetZeroGradient) {
  // g=1 touches only W_y; the h_1 leaf bootstraps through W_x.
  SixNodeCase c;
  const SpanTree t = build_tree(c.mg, c.g, NeuronId::output(c.v(3)), 1);
  const auto tape = forward_tree(t, c.p, c.g);
  const GradAccum acc = prop_gradients(t, tape, c.p, c.g.labels[c.v(3)], LossKind::mse);
  EXPECT_TRUE(acc.is_zero(VarTag::intra(1)));
  EXPECT_FALSE(acc.is_zero(VarTag::input()));
  EXPECT_FALSE(acc.is_zero(VarTag::output()));
}

TEST(Backward, PerfectPredictionHasZeroGradient) {
  SixNodeCase c;
  const auto tape = forward_tree(c.tree, c.p, c.g);
  const GradAccum acc = prop_gradients(c.tree, tape, c.p, tape.root_value(), LossKind::mse);
  EXPECT_EQ(acc.squared_norm(), 0.0);
}

TEST(Backward, RejectsForeignTape) {
  SixNodeCase c;
  const SpanTree other = build_tree(c.mg, c.g, NeuronId::output(c.v(2)), 3);
  const auto tape = forward_tree(other, c.p, c.g);
  EXPECT_THROW(prop_gradients(c.tree, tape, c.p, c.g.labels[c.v(1)], LossKind::mse), Error);
}

TEST(Backward, MergeIsEntrywiseSum) {
  SixNodeCase c;
  const auto tape = forward_tree(c.tree, c.p, c.g);
  const GradAccum a = prop_gradients(c.tree, tape, c.p, c.g.labels[c.v(1)], LossKind::mse);
  GradAccum twice = a;
  twice.merge(a);
  EXPECT_NEAR(twice.squared_norm(), 4.0 * a.squared_norm(), 1e-12);
  EXPECT_EQ(twice.prop_calls, 2 * a.prop_calls);
}

TEST(GradCheck, SmallSuitePasses) {
  GradCheckSpec spec;
  spec.cases = 30;
  spec.seed = 3;
  const GradCheckReport r = grad_check(spec);
  EXPECT_TRUE(r.failures.empty());
  EXPECT_LT(r.max_rel_err, 1e-6);
  for (const auto& d : r.details) {
    EXPECT_TRUE(d.absent_tags_zero);
    EXPECT_EQ(d.prop_calls, d.tree_size - 1);
  }
}

TEST(GradCheck, CrossEntropySuitePasses) {
  GradCheckSpec spec;
  spec.cases = 20;
  spec.loss = LossKind::cross_entropy;
  EXPECT_TRUE(grad_check(spec).failures.empty());
}

TEST(GradCheck, ParallelMatchesSerial) {
  GradCheckSpec spec;
  spec.cases = 16;
  const auto serial = grad_check(spec);
  spec.jobs = 4;
  const auto parallel = grad_check(spec);
  EXPECT_EQ(serial.to_json().dump(), parallel.to_json().dump());
}

TEST(GradCheck, DetectsCorruptedGradient) {
  GradCheckSpec spec;
  spec.cases = 5;
  spec.tamper = [](std::size_t c, GradAccum& g) {
    if (c == 2) g[VarTag::output()].bias[0] += 1e-3;
  };
  const GradCheckReport r = grad_check(spec);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].tag, "b_y");
  EXPECT_EQ(r.failures[0].index, (std::vector<Eigen::Index>{0}));
}

TEST(GradCheck, StrictToleranceExposesRoundOff) {
  GradCheckSpec spec;
  spec.cases = 20;
  spec.tol = 1e-12;
  EXPECT_FALSE(grad_check(spec).failures.empty());
}

TEST(GradCheck, ReportSchema) {
  GradCheckSpec spec;
  spec.cases = 2;
  const auto j = grad_check(spec).to_json();
  for (const char* key : {"cases", "max_rel_err", "failures"}) EXPECT_TRUE(j.contains(key)) << key;
}
