#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "airdde/commands.hpp"
#include "airdde/log.hpp"

namespace {

using airdde::cli::RunConfig;

struct Overrides {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::string> seed, tau, memory_units, horizon, missing_rate, snr_db, out_dir, threads, data_dir,
      checkpoint, split;
  bool resume = false;
  bool dump_trajectory = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "key = value config file");
  cmd->add_option("--set", o.sets, "override any config key (key=value), repeatable")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
  cmd->add_option("--data-dir", o.data_dir, "directory holding stations.csv and series.csv");
  cmd->add_option("--threads", o.threads, "worker threads");
}

void add_model(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--tau", o.tau, "transport delay in grid steps");
  cmd->add_option("--memory-units", o.memory_units, "global memory slots");
  cmd->add_option("--horizon", o.horizon, "forecast horizon in grid steps");
  cmd->add_option("--split", o.split, "train:val:test ratios");
  cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path (default <out-dir>/best.ckpt)");
}

RunConfig build_config(const Overrides& o) {
  RunConfig c = o.config_file.empty() ? RunConfig{} : RunConfig::from_file(o.config_file);
  auto apply = [&](const char* key, const std::optional<std::string>& v) {
    if (v) c.set(key, *v);
  };
  apply("seed", o.seed);
  apply("tau", o.tau);
  apply("memory_units", o.memory_units);
  apply("horizon", o.horizon);
  apply("missing_rate", o.missing_rate);
  apply("snr_db", o.snr_db);
  apply("out_dir", o.out_dir);
  apply("threads", o.threads);
  apply("data_dir", o.data_dir);
  apply("checkpoint", o.checkpoint);
  apply("split", o.split);
  if (o.resume) c.resume = true;
  if (o.dump_trajectory) c.dump_trajectory = true;
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Air quality forecasting with neural delay differential equations"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Overrides o;

  auto* synth = app.add_subcommand("synth", "write a synthetic transport dataset");
  add_common(synth, o);

  auto* train = app.add_subcommand("train", "train a model and write a run directory");
  add_common(train, o);
  add_model(train, o);
  train->add_flag("--resume", o.resume, "continue from <out-dir>/last.ckpt");

  auto* forecast = app.add_subcommand("forecast", "write test-split forecasts");
  add_common(forecast, o);
  add_model(forecast, o);
  forecast->add_flag("--dump-trajectory", o.dump_trajectory, "also write the latent trajectory of the first window");

  auto* eval = app.add_subcommand("eval", "test-split metrics against persistence");
  add_common(eval, o);
  add_model(eval, o);
  eval->add_option("--missing-rate", o.missing_rate, "fraction of input entries dropped");
  eval->add_option("--snr-db", o.snr_db, "input noise level (0 = none)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check on a 4-station toy");
  add_common(gradcheck, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const RunConfig config = build_config(o);
    if (synth->parsed()) return airdde::cli::cmd_synth(config, std::cout);
    if (train->parsed()) return airdde::cli::cmd_train(config, std::cout);
    if (forecast->parsed()) return airdde::cli::cmd_forecast(config, std::cout);
    if (eval->parsed()) return airdde::cli::cmd_eval(config, std::cout);
    return airdde::cli::cmd_gradcheck(config, std::cout);
  } catch (const std::invalid_argument& e) {
    airdde::log::error(std::string("usage error: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    airdde::log::error(e.what());
    return 1;
  }
}
