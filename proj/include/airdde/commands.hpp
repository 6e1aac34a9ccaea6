#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "airdde/config.hpp"
#include "airdde/data.hpp"
#include "airdde/model.hpp"
#include "airdde/params.hpp"
#include "airdde/trainer.hpp"

namespace airdde::cli {

/// A dataset with its chronological splits and training-split statistics.
struct Prepared {
  data::Dataset dataset;
  data::Splits splits;
  data::NormStats stats;
};

Prepared load_and_split(const RunConfig& config);
Prepared split_dataset(const RunConfig& config, data::Dataset dataset);

struct EvalReport {
  train::Metrics model;
  std::vector<train::Metrics> model_by_day;
  train::Metrics persistence;
  std::vector<train::Metrics> persistence_by_day;
  std::size_t windows = 0;
};

/// Test-split metrics for `model`, applying the configured missing-value
/// and noise perturbations to the inputs only.
EvalReport evaluate_on_test(const model::AirDde& model, const Prepared& prepared, const RunConfig& config);

/// Builds the model described by `config` and loads `ckpt` into it.
model::AirDde load_model(const RunConfig& config, const data::Dataset& dataset, const Checkpoint& ckpt);

/// Trains and writes the run directory: config.txt, manifest.txt,
/// loss_curve.csv, best.ckpt and last.ckpt.
train::TrainState run_train(const RunConfig& config, const train::TrainHooks& extra = {});
EvalReport run_eval(const RunConfig& config);

struct GradcheckReport {
  std::vector<GroupGradCheck> groups;
  double max_error = 0.0;
};

/// End-to-end finite-difference check of the training loss on a 4-station
/// toy (T = 6, H = 3, tau = 2).
GradcheckReport toy_gradcheck(std::uint64_t seed, double eps = 1e-5);

int cmd_synth(const RunConfig& config, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);
int cmd_forecast(const RunConfig& config, std::ostream& out);
int cmd_eval(const RunConfig& config, std::ostream& out);
int cmd_gradcheck(const RunConfig& config, std::ostream& out);

}  // namespace airdde::cli
