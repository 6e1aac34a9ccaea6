#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "airdde/model.hpp"
#include "airdde/trainer.hpp"

namespace airdde::cli {

/// Every setting of a run. Loaded from a `key = value` text file ('#' starts
/// a comment), then overridden by command-line flags.
struct RunConfig {
  // paths
  std::string data_dir = "data";
  std::string stations_file;  // default <data_dir>/stations.csv
  std::string series_file;    // default <data_dir>/series.csv
  std::string out_dir = "run";
  std::string checkpoint;     // default <out_dir>/best.ckpt

  // data
  std::string split = "2:1:1";
  std::size_t train_stride = 1;
  std::size_t eval_stride = 1;

  // model
  std::size_t input_length = 24;
  std::size_t horizon = 24;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t hops = 2;
  std::size_t memory_units = 16;
  std::size_t tau = 1;
  double diffusion = 0.1;
  double delta = 1.0;
  std::size_t substeps = 4;
  double kappa = 0.1;
  bool use_advection = true;
  bool future_covariates = false;

  // training
  double lr = 0.005;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;
  std::size_t threads = 1;
  bool resume = false;

  // evaluation
  double missing_rate = 0.0;
  double snr_db = 0.0;  // 0 = no noise
  std::string metrics_file = "metrics.csv";

  // forecast
  bool dump_trajectory = false;

  // gradcheck
  double gradcheck_tolerance = 1e-4;

  // synth
  std::size_t synth_stations = 12;
  std::size_t synth_length = 3000;

  /// Throws std::invalid_argument on an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  static RunConfig from_file(const std::filesystem::path& path);
  /// Applies `key = value` lines on top of this config.
  void merge_text(const std::string& text, const std::string& source);

  /// All keys in a fixed order, formatted so that from_file reproduces them.
  std::vector<std::pair<std::string, std::string>> pairs() const;
  std::string to_text() const;
  /// Field-level checks shared by every command.
  void validate() const;

  std::filesystem::path stations_path() const;
  std::filesystem::path series_path() const;
  std::filesystem::path checkpoint_path() const;

  model::ModelConfig model_config(std::size_t stations, std::size_t feature_dim) const;
  train::TrainConfig train_config() const;
  data::WindowOptions window_options(std::size_t stride) const;
};

}  // namespace airdde::cli
