// Experiment runner: train/evaluate policies on the benchmark problems and
// emit machine-readable results (CSV/JSON) for plotting.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sddec/config.hpp"
#include "sddec/experiment.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitNumericalError = 3;

struct CommonFlags {
  std::string config_path;
  std::string problem = "lq";
  std::string policy = "lstm";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> paths;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "experiment config file");
  cmd->add_option("--problem", f.problem, "lq | consumption | portfolio (when no --config)");
  cmd->add_option("--policy", f.policy, "lstm | feedforward | analytical (when no --config)");
  cmd->add_option("--seed", f.seed, "experiment seed (overrides config)");
  cmd->add_option("--out", f.out_dir, "output directory (overrides config)");
  cmd->add_option("--paths", f.paths, "evaluation path count (overrides config)");
  cmd->add_option("--threads", f.threads, "worker threads (overrides config)");
}

sddec::ExperimentConfig load_config(const CommonFlags& f) {
  sddec::ExperimentConfig c = f.config_path.empty()
                                  ? sddec::default_config(f.problem, f.policy)
                                  : sddec::parse_config_file(f.config_path);
  if (f.seed) {
    c.seed = *f.seed;
    c.train.seed = *f.seed;
  }
  if (f.out_dir) c.out_dir = *f.out_dir;
  if (f.paths) c.train.test_size = *f.paths;
  if (f.threads) c.train.threads = *f.threads;
  c.validate();
  return c;
}

void print_summary(const sddec::RunSummary& s) {
  std::cout << sddec::summary_to_json(s).dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"policy training for stochastic control with delay"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  int repeat = 1;
  CLI::App* train_cmd = app.add_subcommand("train", "train a policy and evaluate it");
  add_common(train_cmd, train_flags);
  train_cmd->add_option("--repeat", repeat, "independent training repeats (derived seeds)");

  CommonFlags eval_flags;
  std::string checkpoint;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint or analytical policy");
  add_common(eval_cmd, eval_flags);
  eval_cmd->add_option("--checkpoint", checkpoint, "parameter checkpoint to load");

  CommonFlags ablate_flags;
  std::vector<double> lags;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate-lag", "train the feedforward model across lag windows");
  add_common(ablate_cmd, ablate_flags);
  ablate_cmd->add_option("--lags", lags, "processed lag times (grid multiples)")->required();

  CommonFlags print_flags;
  CLI::App* print_cmd = app.add_subcommand("print-config", "print the normalized config");
  add_common(print_cmd, print_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      print_summary(sddec::run_train(load_config(train_flags), repeat));
    } else if (*eval_cmd) {
      print_summary(sddec::run_evaluate(load_config(eval_flags), checkpoint));
    } else if (*ablate_cmd) {
      sddec::AblationResult res = sddec::run_ablation_lag(load_config(ablate_flags), lags);
      for (std::size_t i = 0; i < res.lags.size(); ++i) {
        std::printf("lag %.3f  final cost %.6f\n", res.lags[i], res.costs[i]);
      }
      std::printf("spearman rho %.4f\n", res.spearman_rho);
    } else if (*print_cmd) {
      std::cout << sddec::serialize_config(load_config(print_flags));
    }
  } catch (const sddec::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const sddec::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
