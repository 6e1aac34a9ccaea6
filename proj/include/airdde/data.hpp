#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "airdde/geo.hpp"
#include "airdde/tensor.hpp"

namespace airdde::data {

inline constexpr const char* kWindSpeed = "wind_speed";
inline constexpr const char* kWindDirection = "wind_direction";

/// Station series on a fixed time grid.
///
/// Series CSV schema (long format, one row per station and timestamp):
///   timestamp,station_id,target,<factor columns...>
/// Timestamps are naive "YYYY-MM-DD HH:MM:SS". The factors must include
/// wind_speed (km/h, >= 0) and wind_direction (degrees clockwise from north
/// the wind blows toward, in [0, 360)).
struct Dataset {
  geo::StationSet stations;
  std::vector<std::int64_t> times;  // seconds, naive clock
  double granularity_hours = 1.0;
  std::vector<std::string> factor_names;
  Tensor target;      // N x L
  Tensor covariates;  // N x L x F (raw factors, file column order)

  std::size_t num_stations() const { return stations.size(); }
  std::size_t length() const { return times.size(); }
  std::size_t num_factors() const { return factor_names.size(); }
  std::size_t factor_index(const std::string& name) const;

  /// Time range [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const;
  /// Checks winds, grid regularity and tensor shapes.
  void validate() const;
};

std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t seconds);

Dataset load_dataset(const std::filesystem::path& stations_path, const std::filesystem::path& series_path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& stations_path,
                  const std::filesystem::path& series_path);

/// Model input channels derived from the raw factors: wind becomes its
/// east/north components (u = v sin(dir), v = v cos(dir)); other factors
/// pass through. Result is N x L x F.
Tensor model_features(const Dataset& dataset);
std::vector<std::string> model_feature_names(const Dataset& dataset);

/// Per-channel z-score statistics. Channel 0 is the target; channels 1..F
/// are the model features.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  static NormStats fit(const Dataset& train);
  double normalize(std::size_t channel, double v) const { return (v - mean[channel]) / stddev[channel]; }
  double denormalize(std::size_t channel, double v) const { return v * stddev[channel] + mean[channel]; }
};

/// Mean of each raw channel (target, then factors) over a split, used as the
/// cold-start fill for missing values.
std::vector<double> raw_channel_means(const Dataset& dataset);

struct SplitRatios {
  double train = 2.0, val = 1.0, test = 1.0;
  static SplitRatios parse(const std::string& text);  // "a:b:c"
};

struct Splits {
  Dataset train, val, test;
};

/// Contiguous train / val / test in time order. Lengths are floor(L*r_k/sum)
/// for train and val; test takes the remainder. Each must hold min_length steps.
Splits chronological_split(const Dataset& dataset, const SplitRatios& ratios, std::size_t min_length);

/// One training instance. Inputs and targets stay in raw units.
struct WindowSample {
  std::size_t start = 0;   // index of the first input step within its split
  Tensor inputs;           // N x T raw target
  Tensor features;         // N x T x F model features
  Tensor targets;          // N x H raw target
  Tensor future_features;  // N x H x F
  /// Advection graph per step of [start, start + T + H) in split order; entry
  /// k uses the wind at step start + k - tau (clamped to the split start).
  std::shared_ptr<const std::vector<geo::Graph>> graphs;

  std::size_t input_length() const { return inputs.cols(); }
  std::size_t horizon() const { return targets.cols(); }
  const geo::Graph& graph(std::size_t k) const { return (*graphs)[start + k]; }
};

struct WindowOptions {
  std::size_t input_length = 24;
  std::size_t horizon = 24;
  std::size_t stride = 1;
  int tau = 1;
};

/// Advection graph for every step of a split.
std::shared_ptr<const std::vector<geo::Graph>> split_advection_graphs(const Dataset& split, int tau);

/// floor((L - T - H) / stride) + 1 windows. Inputs and graphs come from
/// `inputs`; targets come from `targets` (same grid), so perturbations of the
/// inputs never reach the metric targets.
std::vector<WindowSample> make_windows(const Dataset& inputs, const Dataset& targets, const WindowOptions& options);
std::vector<WindowSample> make_windows(const Dataset& split, const WindowOptions& options);

struct MissingResult {
  Dataset data;
  /// N x L x (1 + F): 1 where the raw entry (target then factors) was dropped.
  Tensor mask;
};

/// Drops each raw entry with probability `rate`, sampling every station from
/// its own seeded stream, and fills drops by carrying the last observation
/// forward per channel (`fill` at a series start).
MissingResult perturb_missing(const Dataset& split, double rate, std::uint64_t seed, std::span<const double> fill);

/// Adds white Gaussian noise per station and channel with power
/// P_signal / 10^(snr_db / 10), where P_signal is the mean square of that
/// station's channel. Wind speed is clamped at 0 and direction wrapped into
/// [0, 360) afterwards.
Dataset perturb_noise(const Dataset& split, double snr_db, std::uint64_t seed);

/// Plain-text key=value manifest: channel order, granularity, norm stats.
void write_manifest(const std::filesystem::path& path, const Dataset& dataset, const NormStats* stats);

}  // namespace airdde::data
