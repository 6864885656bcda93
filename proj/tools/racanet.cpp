#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "racanet/racanet.hpp"

namespace {

void add_common(CLI::App* cmd, racanet::harness::CliOptions& opt) {
  cmd->add_option("--config", opt.config_path, "JSON config file (sections: model, synth)");
  cmd->add_option("--data", opt.data_dir, "dataset directory");
  cmd->add_option("--out", opt.out_dir, "output directory");
  long long seed = -1;
  cmd->add_option_function<long long>(
      "--seed", [&opt](long long s) { opt.seed = static_cast<uint64_t>(s); }, "RNG seed");
  (void)seed;
  cmd->add_option_function<int>("--epochs", [&opt](int e) { opt.epochs = e; }, "epoch override");
  cmd->add_option_function<int>("--ka", [&opt](int v) { opt.ka = v; }, "anchor window size");
  cmd->add_option_function<int>("--kn", [&opt](int v) { opt.kn = v; },
                                "redistribution neighborhood size");
  cmd->add_option_function<double>("--lambda-cons", [&opt](double v) { opt.lambda_cons = v; },
                                   "consistency loss weight");
  cmd->add_flag("--no-cons", opt.no_cons, "disable the consistency loss (lambda_cons = 0)");
  cmd->add_flag("--no-pretrain", opt.no_pretrain, "ignore any pretraining checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-T crowd counting: synthetic data, two-stage training, evaluation, ablations"};
  app.require_subcommand(1);

  racanet::harness::CliOptions opt;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (train/val/test)");
  auto* pretrain = app.add_subcommand("pretrain", "stage-1 alignment pretraining");
  auto* train = app.add_subcommand("train", "stage-2 counting training");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and emit heatmaps");
  auto* ablate = app.add_subcommand("ablate", "sweep one hyperparameter axis");
  for (auto* cmd : {synth, pretrain, train, eval, ablate}) add_common(cmd, opt);
  train->add_option("--ckpt", opt.ckpt, "pretraining checkpoint to transfer from");
  eval->add_option("--ckpt", opt.ckpt, "checkpoint to evaluate");
  ablate->add_option("--axis", opt.axis, "axis: ka | kn | lambda_cons | components");
  ablate->add_option("--values", opt.values, "axis values")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return racanet::harness::run_synth(opt);
    if (pretrain->parsed()) return racanet::harness::run_pretrain(opt);
    if (train->parsed()) return racanet::harness::run_train(opt);
    if (eval->parsed()) return racanet::harness::run_eval(opt);
    if (ablate->parsed()) return racanet::harness::run_ablate(opt);
  } catch (const racanet::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const racanet::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
