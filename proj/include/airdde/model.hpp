#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "airdde/autodiff.hpp"
#include "airdde/blocks.hpp"
#include "airdde/checkpoint.hpp"
#include "airdde/data.hpp"
#include "airdde/dde.hpp"
#include "airdde/geo.hpp"
#include "airdde/params.hpp"

namespace airdde::model {

using ad::Var;

struct ModelConfig {
  std::size_t N = 12;
  std::size_t T = 24;            // input steps
  std::size_t H = 24;            // forecast steps
  std::size_t d = 32;            // node embedding width (E1, E2)
  std::size_t d_e = 32;          // latent width
  std::size_t K = 2;             // graph hops
  std::size_t m = 16;            // global memory units
  std::size_t tau = 1;           // delay, grid steps
  double D = 0.1;                // diffusion coefficient
  double delta = 1.0;            // Huber threshold on normalized targets
  std::size_t substeps = 4;      // solver steps per grid interval
  double kappa = 0.1;            // diffusion-graph threshold
  std::size_t feature_dim = 2;   // model covariate channels (wind u, v, ...)
  bool use_advection = true;     // false drops the delayed advection term
  bool future_covariates = false;  // use provided horizon covariates instead of holding step T

  void validate() const;
  /// key=value pairs, stable order.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  static ModelConfig from_meta(const std::map<std::string, std::string>& meta, const std::string& prefix);
};

double huber_value(double r, double delta);
/// Mean elementwise Huber loss.
Var huber_loss(Var pred, Var target, double delta);

/// Everything a forward pass produced, for inspection and staged tests.
struct ForwardTrace {
  Var adjacency;
  std::vector<Var> encoder;   // h_e^0 (zeros) .. h_e^T
  std::vector<Var> initial;   // h_m at grid points T - tau .. T
  std::vector<Var> solved;    // h_p^{T+1} .. h_p^{T+H}
  std::vector<Var> decoder;   // decoder states after each horizon step
  dde::HistoryBuffer history;
};

/// Encoder, memory-augmented initializer, delay evolution and decoder.
class AirDde {
 public:
  AirDde(ModelConfig config, geo::StationSet stations, data::NormStats stats, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  const geo::StationSet& stations() const { return stations_; }
  const data::NormStats& norm() const { return norm_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Tensor& diffusion_graph() const { return diffusion_graph_; }

  const nn::GnnGruCell& encoder_cell() const { return encoder_; }
  const nn::MemoryAugmentedAttention& maa() const { return maa_; }
  const dde::EvolutionFunction& evolution() const { return evolution_; }
  const nn::GnnGruCell& decoder_cell() const { return decoder_; }
  const nn::Mlp& output_head() const { return output_; }
  ParamId embedding1() const { return e1_; }
  ParamId embedding2() const { return e2_; }

  /// Normalized encoder inputs: N x T x (1 + F), target first.
  Tensor normalized_inputs(const data::WindowSample& sample) const;
  /// Normalized covariates at a window step (0-based; >= T reads the horizon covariates).
  Tensor normalized_features(const data::WindowSample& sample, std::size_t step) const;
  /// Row-normalized advection graph at a window step.
  Tensor advection_matrix(const data::WindowSample& sample, std::size_t step) const;

  /// h_e^0 = 0, then one GNN-GRU step per input step. Returns T + 1 states.
  std::vector<Var> encode(const Bound& p, Var adjacency, const Tensor& inputs) const;
  /// Fused MAA states at grid points T - tau .. T.
  std::vector<Var> init_states(const Bound& p, std::span<const Var> encoder_states,
                               const data::WindowSample& sample) const;
  /// Normalized predictions, N x H.
  Var forward(const Bound& p, const data::WindowSample& sample, ForwardTrace* trace = nullptr) const;
  /// Huber loss against the normalized targets.
  Var loss(const Bound& p, const data::WindowSample& sample) const;
  /// Denormalized predictions, N x H.
  Tensor forecast(const data::WindowSample& sample) const;

  /// Parameters, norm stats and config.
  Checkpoint to_checkpoint() const;
  static AirDde from_checkpoint(const Checkpoint& ckpt, const geo::StationSet& stations);
  /// Throws when the checkpoint's layout or config differs from this model.
  void load_params(const Checkpoint& ckpt);

 private:
  ModelConfig config_;
  geo::StationSet stations_;
  data::NormStats norm_;
  Tensor diffusion_graph_;
  ParamStore params_;
  ParamId e1_, e2_;
  nn::GnnGruCell encoder_;
  nn::MemoryAugmentedAttention maa_;
  dde::EvolutionFunction evolution_;
  nn::GnnGruCell decoder_;
  nn::Mlp output_;
};

}  // namespace airdde::model
