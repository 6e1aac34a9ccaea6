#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "airdde/checkpoint.hpp"
#include "airdde/data.hpp"
#include "airdde/model.hpp"
#include "airdde/params.hpp"

namespace airdde::train {

struct AdamState {
  std::vector<Tensor> m, v;
  std::uint64_t step = 0;

  static AdamState zeros(const std::vector<Tensor>& like);
};

struct AdamOptions {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update in place.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamOptions& options);

struct TrainConfig {
  AdamOptions adam;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
  std::size_t threads = 1;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mae = 0.0;
  bool improved = false;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  AdamState adam;
  std::size_t epochs_done = 0;
  std::size_t bad_epochs = 0;
  double best_val_mae = 0.0;
  std::size_t best_epoch = 0;
  std::vector<Tensor> best_params;
  std::vector<EpochRecord> curve;
  bool stopped = false;

  void to_checkpoint(Checkpoint& ck, const ParamStore& layout) const;
  static TrainState from_checkpoint(const Checkpoint& ck, const ParamStore& layout);
};

struct TrainHooks {
  /// Replaces the measured validation MAE of an epoch.
  std::function<double(std::size_t epoch, double measured)> val_override;
  /// Called after every epoch with the model holding the current parameters.
  std::function<void(const TrainState&, const model::AirDde&)> on_epoch;
};

/// Mean loss and its parameter gradient over a batch. Samples are split
/// across `threads` workers, each with its own tape; per-sample gradients
/// are summed in sample order, so the result does not depend on `threads`.
double batch_gradient(const model::AirDde& model, std::span<const data::WindowSample* const> batch,
                      std::size_t threads, std::vector<Tensor>& grads);

/// Shuffled mini-batch Adam with early stopping on validation MAE. On return
/// the model holds the best parameters. Pass `resume` to continue a run.
TrainState train_loop(model::AirDde& model, const std::vector<data::WindowSample>& train,
                      const std::vector<data::WindowSample>& val, const TrainConfig& config,
                      const TrainHooks& hooks = {}, std::optional<TrainState> resume = std::nullopt);

/// Batch order for an epoch, seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch);

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;   // percent, over |y| > eps_mape
  double smape = 0.0;  // in [0, 2], over |y| + |yhat| > eps_mape
  std::size_t count = 0;
};

inline constexpr double kEpsMape = 1e-3;

/// Element-wise metrics over equally shaped prediction/target lists.
Metrics evaluate(std::span<const double> preds, std::span<const double> targets);

/// Accumulates errors window by window; `by_day` splits horizon steps into
/// blocks of `steps_per_day`.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::size_t horizon, std::size_t steps_per_day);
  void add(const Tensor& preds, const Tensor& targets);  // N x H each
  Metrics overall() const;
  std::vector<Metrics> by_day() const;
  std::size_t days() const { return days_.size(); }

 private:
  struct Sums {
    double abs = 0.0, sq = 0.0, ape = 0.0, sape = 0.0;
    std::size_t n = 0, n_ape = 0, n_sape = 0;
    void add(double pred, double target);
    Metrics metrics() const;
  };
  std::size_t horizon_, steps_per_day_;
  Sums all_;
  std::vector<Sums> days_;
};

/// Model forecasts over windows; returns overall metrics and fills `acc` if given.
Metrics evaluate_model(const model::AirDde& model, const std::vector<data::WindowSample>& windows,
                       std::size_t threads = 1, MetricAccumulator* acc = nullptr);
Metrics evaluate_persistence(const std::vector<data::WindowSample>& windows, MetricAccumulator* acc = nullptr);

}  // namespace airdde::train
