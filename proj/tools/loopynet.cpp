#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "loopynet/cli.hpp"

namespace {

struct Overrides {
  std::optional<unsigned> jobs;
  std::optional<double> tol;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

// Flag values win over the config file, which wins over built-in defaults.
void apply(loopynet::RunConfig& c, const Overrides& o) {
  if (o.jobs) {
    c.training.epoch.jobs = *o.jobs;
    c.gradcheck.jobs = *o.jobs;
  }
  if (o.tol) c.gradcheck.tol = *o.tol;
  if (o.epochs) c.training.max_epochs = *o.epochs;
  if (o.seed) c.training.seed = *o.seed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep loopy neural network: training, evaluation and inspection"};
  app.require_subcommand(1);

  std::string config;
  Overrides o;
  bool cv = false, table = false;
  std::string root, out_dir;
  int hops = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--jobs", o.jobs, "worker threads for batch mode and gradcheck");
  };
  auto* train = app.add_subcommand("train", "train and write params JSON plus epoch log");
  common(train);
  train->add_option("--epochs", o.epochs, "override training.max_epochs");
  train->add_option("--seed", o.seed, "override training.seed");
  auto* eval = app.add_subcommand("eval", "score trained params");
  common(eval);
  eval->add_flag("--cv", cv, "k-fold protocol, retraining per fold");
  eval->add_flag("--table", table, "plain-text table instead of JSON");
  auto* tree = app.add_subcommand("tree", "dump the g-tree rooted at a node's output");
  common(tree);
  tree->add_option("--root", root, "node id")->required();
  tree->add_option("--g", hops, "hop limit (default: model.g_hops)");
  auto* gradcheck = app.add_subcommand("gradcheck", "compare reverse-sweep and FD gradients");
  common(gradcheck);
  gradcheck->add_option("--tol", o.tol, "relative error threshold");
  auto* synth = app.add_subcommand("synth", "write a synthetic planted-partition graph");
  common(synth);
  synth->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  loopynet::RunConfig c;
  const loopynet::CommandIo io{std::cout, std::cerr};
  const int rc = loopynet::run_command(io, [&] {
    c = loopynet::load_config(config);
    apply(c, o);
    return 0;
  });
  if (rc != 0) return rc;

  if (train->parsed()) return loopynet::cmd_train(c, io);
  if (eval->parsed()) return loopynet::cmd_eval(c, cv, table, io);
  if (tree->parsed()) return loopynet::cmd_tree(c, root, hops > 0 ? hops : c.model.g_hops, io);
  if (gradcheck->parsed()) return loopynet::cmd_gradcheck(c, io);
  return loopynet::cmd_synth(c, out_dir, io);
}
