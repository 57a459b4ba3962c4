#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace loopynet;
using namespace testing_support;

namespace {

// 1x1x1 model: one scalar per weight and bias.
Params scalar_params(double value) {
  Params p(Dims{1, {1}, 1});
  for (auto& b : p.blocks()) {
    b.weight.setConstant(value);
    b.bias.setConstant(value);
  }
  return p;
}

GradAccum constant_grad(const Dims& dims, double value) {
  GradAccum g(dims);
  for (auto& b : g.grads.blocks()) {
    b.weight.setConstant(value);
    b.bias.setConstant(value);
  }
  return g;
}

TrainConfig fixture_config() {
  TrainConfig cfg;
  cfg.hops = 2;
  cfg.max_epochs = 50;
  cfg.seed = 7;
  cfg.tolerance = 0.0;
  cfg.optimizer = OptConfig::sgd(0.5, 0.5);
  return cfg;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(Sgd, ScalarStep) {
  Params p = scalar_params(1.0);
  OptState s(OptConfig::sgd(0.1, 0.1), p.dims());
  sgd_step(p, constant_grad(p.dims(), 2.0), s);
  EXPECT_DOUBLE_EQ(p[VarTag::output()].weight(0, 0), 0.8);
  EXPECT_DOUBLE_EQ(p[VarTag::input()].bias[0], 0.8);
  EXPECT_EQ(s.step, 1u);
}

TEST(Sgd, SeparateRatesForWeightsAndBiases) {
  Params p = scalar_params(1.0);
  OptState s(OptConfig::sgd(0.1, 0.0), p.dims());
  sgd_step(p, constant_grad(p.dims(), 2.0), s);
  EXPECT_DOUBLE_EQ(p[VarTag::output()].weight(0, 0), 0.8);
  EXPECT_DOUBLE_EQ(p[VarTag::output()].bias[0], 1.0);
}

TEST(Sgd, NoOpIdentities) {
  const Params start = init_params(Dims{3, {4, 2}, 2}, 1, InitScheme::uniform(1.0));
  Params p = start;
  OptState zero_rate(OptConfig::sgd(0.0, 0.0), p.dims());
  sgd_step(p, constant_grad(p.dims(), 3.0), zero_rate);
  EXPECT_TRUE(p == start);
  OptState s(OptConfig::sgd(0.5, 0.5), p.dims());
  sgd_step(p, GradAccum(p.dims()), s);
  EXPECT_TRUE(p == start);
}

TEST(Sgd, NonFiniteGradientNamesTag) {
  Params p = scalar_params(1.0);
  OptState s(OptConfig::sgd(), p.dims());
  GradAccum g(p.dims());
  g[VarTag::intra(1)].weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    sgd_step(p, g, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("W_h1"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(p == scalar_params(1.0));
}

TEST(Adam, FirstStepIsLearningRateSized) {
  for (double g0 : {10.0, 0.1, -3.0}) {
    Params p = scalar_params(0.0);
    OptState s(OptConfig::adam(0.01, 0.01), p.dims());
    adam_step(p, constant_grad(p.dims(), g0), s);
    const double moved = -p[VarTag::output()].weight(0, 0);
    // m̂ = g0, v̂ = g0², so the step is η·g0 / (|g0| + ε).
    EXPECT_NEAR(moved, 0.01 * g0 / (std::abs(g0) + 1e-8), 1e-18);
    EXPECT_NEAR(std::abs(moved), 0.01, 1e-8);
  }
}

TEST(Adam, FirstStepIsScaleInvariant) {
  Params p(Dims{1, {1}, 2});
  OptState s(OptConfig::adam(0.01, 0.01), p.dims());
  GradAccum g(p.dims());
  g[VarTag::output()].bias << 10.0, 0.1;
  adam_step(p, g, s);
  const auto& b = p[VarTag::output()].bias;
  EXPECT_NEAR(std::abs(b[0]), std::abs(b[1]), 1e-6 * 0.01);
}

TEST(Adam, ZeroGradientForeverIsFixedPoint) {
  const Params start = init_params(Dims{2, {3}, 2}, 4, InitScheme::uniform(1.0));
  Params p = start;
  OptState s(OptConfig::adam(), p.dims());
  for (int i = 0; i < 10; ++i) adam_step(p, GradAccum(p.dims()), s);
  EXPECT_TRUE(p == start);
  EXPECT_EQ(s.step, 10u);
}

TEST(Adam, MomentShapesFollowParams) {
  Params p = init_params(Dims{2, {3, 4}, 2}, 4, InitScheme::uniform(1.0));
  OptState s(OptConfig::adam(), p.dims());
  adam_step(p, constant_grad(p.dims(), 1.0), s);
  EXPECT_TRUE(s.first_moment.dims() == p.dims());
  EXPECT_TRUE(s.second_moment.dims() == p.dims());
}

TEST(Optimizer, MaxNormCapsTheStep) {
  Params p = scalar_params(0.0);
  OptConfig cfg = OptConfig::sgd(1.0, 1.0);
  cfg.max_norm = 1.0;
  OptState s(cfg, p.dims());
  GradAccum g = constant_grad(p.dims(), 10.0);
  optimizer_step(p, g, s);
  double moved = 0.0;
  for (const auto& b : p.blocks()) moved += b.weight.squaredNorm() + b.bias.squaredNorm();
  EXPECT_NEAR(std::sqrt(moved), 1.0, 1e-12);
}

TEST(KFold, ExactAndRemainderSizes) {
  const auto ten = kfold_split(10, 5, 1);
  for (const auto& f : ten) EXPECT_EQ(f.size(), 2u);
  const auto eleven = kfold_split(11, 5, 1);
  std::vector<std::size_t> sizes;
  for (const auto& f : eleven) sizes.push_back(f.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 2, 2, 2, 2}));
}

TEST(KFold, PartitionProperty) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t folds = rng.between(2, 8);
    const std::size_t n = rng.between(folds, 200);
    const std::uint64_t seed = rng.next();
    const auto split = kfold_split(n, folds, seed);
    ASSERT_EQ(split.size(), folds);
    std::set<NodeIndex> all;
    std::size_t lo = n, hi = 0, total = 0;
    for (const auto& f : split) {
      lo = std::min(lo, f.size());
      hi = std::max(hi, f.size());
      total += f.size();
      all.insert(f.begin(), f.end());
    }
    EXPECT_EQ(total, n);
    EXPECT_EQ(all.size(), n) << "disjoint";
    EXPECT_EQ(*all.rbegin(), n - 1);
    EXPECT_LE(hi - lo, 1u);
    EXPECT_EQ(split, kfold_split(n, folds, seed));
  }
}

TEST(KFold, TooFewNodes) {
  EXPECT_THROW(kfold_split(4, 5, 1), Error);
  EXPECT_THROW(kfold_split(10, 1, 1), Error);
}

TEST(Metrics, PerfectPredictions) {
  const std::vector<Eigen::VectorXd> y{vec({1, 0}), vec({0, 1})};
  const Metrics m = compute_metrics(y, y);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  ASSERT_TRUE(m.lrs);
  EXPECT_EQ(*m.lrs, 0.0);
}

TEST(Metrics, RankingLossSinglePair) {
  EXPECT_EQ(*node_ranking_loss(vec({0.9, 0.1}), vec({1, 0})), 0.0);
  EXPECT_EQ(*node_ranking_loss(vec({0.1, 0.9}), vec({1, 0})), 1.0);
  EXPECT_EQ(*node_ranking_loss(vec({0.5, 0.5}), vec({1, 0})), 1.0);  // ties count as wrong
  EXPECT_FALSE(node_ranking_loss(vec({0.5, 0.5}), vec({1, 1})));
  EXPECT_DOUBLE_EQ(*node_ranking_loss(vec({0.9, 0.2, 0.5}), vec({1, 0, 1})), 0.0);
  EXPECT_DOUBLE_EQ(*node_ranking_loss(vec({0.3, 0.4, 0.5}), vec({1, 0, 1})), 0.5);
}

TEST(Metrics, MeanSquareArithmetic) {
  const std::vector<Eigen::VectorXd> pred(4, vec({0.6, 0.4}));
  const std::vector<Eigen::VectorXd> target(4, vec({1, 0}));
  const Metrics m = compute_metrics(pred, target);
  EXPECT_NEAR(m.mse, 0.16, 1e-15);
  EXPECT_NEAR(m.mae, 0.4, 1e-15);
  EXPECT_EQ(*m.lrs, 0.0);
}

TEST(Metrics, RankingLossUndefinedWhenEveryNodeSkipped) {
  const std::vector<Eigen::VectorXd> t{vec({1, 1}), vec({0, 0})};
  const Metrics m = compute_metrics(t, t);
  EXPECT_FALSE(m.lrs);
  const MetricsReport r = make_report({m});
  EXPECT_TRUE(report_to_json(r)["lrs"].is_null());
  EXPECT_NE(report_table(r).find("n/a"), std::string::npos);
}

TEST(Metrics, RankingLossBounds) {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const auto d = static_cast<Eigen::Index>(rng.between(1, 6));
    Eigen::VectorXd pred(d), target(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      pred[j] = rng.uniform();
      target[j] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    if (auto r = node_ranking_loss(pred, target)) {
      ASSERT_GE(*r, 0.0);
      ASSERT_LE(*r, 1.0);
    }
  }
}

TEST(Metrics, ReportSummaryAndTable) {
  Metrics a, b;
  a.mse = 0.1;
  b.mse = 0.3;
  a.mae = b.mae = 0.2;
  a.lrs = 0.0;
  const MetricsReport r = make_report({a, b});
  EXPECT_DOUBLE_EQ(r.mse.mean, 0.2);
  EXPECT_DOUBLE_EQ(r.mse.std, 0.1);
  EXPECT_EQ(r.mae.std, 0.0);
  ASSERT_TRUE(r.lrs);
  EXPECT_EQ(r.lrs->mean, 0.0);
  const auto j = report_to_json(r);
  for (const char* key : {"mse", "mae", "lrs", "folds"}) EXPECT_TRUE(j.contains(key));
  const std::string table = report_table(r);
  EXPECT_NE(table.find("MSE"), std::string::npos);
  EXPECT_NE(table.find("0.2000 ± 0.1000"), std::string::npos) << table;
}

TEST(TrainEpoch, ZeroRatesEvaluateOnly) {
  const Graph g = six_node_graph();
  const Params start = init_params(Dims{2, {3}, 2}, 2, InitScheme::uniform(0.7));
  Params p = start;
  TreeCache trees(g, ModelGraph(g, {3}), 2);
  OptState opt(OptConfig::sgd(0.0, 0.0), p.dims());
  Rng rng(1);
  const double loss = train_epoch(g, trees, p, opt, EpochConfig{}, all_nodes(g), rng);
  EXPECT_TRUE(p == start);
  std::vector<Eigen::VectorXd> preds;
  for (NodeIndex i = 0; i < g.node_count(); ++i) preds.push_back(predict(trees, p, g, i));
  EXPECT_NEAR(loss, graph_loss(preds, g.labels, LossKind::mse) / 6.0, 1e-15);
}

TEST(TrainEpoch, SingleNodeStepOnlyTouchesItsTree) {
  const Graph g = six_node_graph();
  const Params start = init_params(Dims{2, {3}, 2}, 2, InitScheme::uniform(0.7));
  const NodeIndex root = g.index_of("v6");
  TreeCache trees(g, ModelGraph(g, {3}), 1);
  const SpanTree& t = trees.output_tree(root);
  const GradAccum grad =
      prop_gradients(t, forward_tree(t, start, g), start, g.labels[root], LossKind::mse);
  Params p = start;
  OptState opt(OptConfig::sgd(0.3, 0.3), p.dims());
  Rng rng(1);
  train_epoch(g, trees, p, opt, EpochConfig{}, {root}, rng);
  for (const EntryRef& e : all_entries(p)) {
    const bool moved = entry_value(p, e) != entry_value(start, e);
    EXPECT_EQ(moved, entry_value(grad.grads, e) != 0.0) << to_string(e);
  }
  EXPECT_TRUE(p[VarTag::intra(1)].weight == start[VarTag::intra(1)].weight);
}

TEST(TrainEpoch, Errors) {
  const Graph g = six_node_graph();
  Params p(Dims{2, {3}, 2});
  TreeCache trees(g, ModelGraph(g, {3}), 2);
  OptState opt(OptConfig::sgd(), p.dims());
  Rng rng(1);
  EXPECT_THROW(train_epoch(g, trees, p, opt, EpochConfig{}, {}, rng), Error);
}

TEST(Train, DeterministicForFixedSeeds) {
  const Graph g = generate_synthetic(7, SynthSpec{});
  const Params init = init_params(Dims{4, {8}, 2}, 1, InitScheme::uniform(0.5));
  TrainConfig cfg = fixture_config();
  cfg.max_epochs = 3;
  const auto a = train(g, init, cfg, all_nodes(g));
  const auto b = train(g, init, cfg, all_nodes(g));
  EXPECT_EQ(params_to_string(a.params), params_to_string(b.params));
  cfg.seed = 8;
  const auto c = train(g, init, cfg, all_nodes(g));
  EXPECT_NE(params_to_string(a.params), params_to_string(c.params));
}

TEST(Train, LossTrendIsDownhill) {
  const Graph g = generate_synthetic(7, SynthSpec{});
  const Params init = init_params(Dims{4, {8}, 2}, 1, InitScheme::uniform(0.5));
  const auto result = train(g, init, fixture_config(), all_nodes(g));
  ASSERT_EQ(result.log.size(), 50u);
  std::vector<double> avg;
  for (std::size_t e = 4; e < result.log.size(); ++e) {
    double s = 0.0;
    for (std::size_t w = e - 4; w <= e; ++w) s += result.log[w].mean_loss;
    avg.push_back(s / 5.0);
  }
  std::size_t downhill = 0;
  for (std::size_t e = 1; e < avg.size(); ++e) downhill += avg[e] <= avg[e - 1] ? 1 : 0;
  EXPECT_GE(static_cast<double>(downhill), 0.9 * static_cast<double>(avg.size() - 1));
}

TEST(Train, StopsOnceImprovementStalls) {
  const Graph g = six_node_graph();
  const Params init = init_params(Dims{2, {3}, 2}, 2, InitScheme::uniform(0.5));
  TrainConfig cfg;
  cfg.max_epochs = 500;
  cfg.optimizer = OptConfig::sgd(0.0, 0.0);  // flat loss: stalls immediately
  const auto r = train(g, init, cfg, all_nodes(g));
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.log.size(), 1u + cfg.patience);
}

TEST(Train, BatchModeIsThreadCountInvariant) {
  const Graph g = generate_synthetic(7, SynthSpec{});
  const Params init = init_params(Dims{4, {8}, 2}, 1, InitScheme::uniform(0.5));
  TrainConfig cfg = fixture_config();
  cfg.max_epochs = 4;
  cfg.epoch.batch = true;
  cfg.optimizer = OptConfig::sgd(0.05, 0.05);
  const auto serial = train(g, init, cfg, all_nodes(g));
  cfg.epoch.jobs = 4;
  const auto threaded = train(g, init, cfg, all_nodes(g));
  EXPECT_EQ(params_to_string(serial.params), params_to_string(threaded.params));
  EXPECT_LT(serial.log.back().mean_loss, serial.log.front().mean_loss);
}

TEST(Train, AdamReducesLoss) {
  const Graph g = generate_synthetic(7, SynthSpec{});
  const Params init = init_params(Dims{4, {8}, 2}, 1, InitScheme::uniform(0.5));
  TrainConfig cfg = fixture_config();
  cfg.max_epochs = 10;
  cfg.optimizer = OptConfig::adam();
  const auto r = train(g, init, cfg, all_nodes(g));
  EXPECT_LT(r.log.back().mean_loss, 0.5 * r.log.front().mean_loss);
}

TEST(Evaluate, ShapeMismatch) {
  const Graph g = six_node_graph();
  const Params wrong(Dims{2, {3}, 3});
  EXPECT_THROW(evaluate(g, wrong, all_nodes(g), 2), Error);
}

TEST(CrossValidate, FoldsAndBaseline) {
  const Graph g = generate_synthetic(7, SynthSpec{});
  const Params init = init_params(Dims{4, {8}, 2}, 1, InitScheme::uniform(0.5));
  TrainConfig cfg = fixture_config();
  cfg.max_epochs = 10;
  const MetricsReport r = cross_validate(g, init, cfg, 5, 11);
  EXPECT_EQ(r.folds.size(), 5u);
  EXPECT_GE(r.mse.std, 0.0);
  EXPECT_LT(r.mse.mean, 0.5);
}
