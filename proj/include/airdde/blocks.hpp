#pragma once

#include <span>
#include <string>
#include <vector>

#include "airdde/autodiff.hpp"
#include "airdde/geo.hpp"
#include "airdde/params.hpp"

namespace airdde::nn {

using ad::Var;

struct Linear {
  ParamId weight;  // in x out
  ParamId bias;    // 1 x out, or invalid
  std::size_t in = 0, out = 0;

  static Linear create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, bool with_bias,
                       Rng& rng);
  Var operator()(const Bound& p, Var x) const;
};

/// Stack of Linear layers with ReLU between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  /// widths = {in, hidden..., out}
  static Mlp create(ParamStore& store, const std::string& name, const std::vector<std::size_t>& widths, Rng& rng);
  Var operator()(const Bound& p, Var x) const;
  std::size_t in() const { return layers.front().in; }
  std::size_t out() const { return layers.back().out; }
};

/// sum_{k=0..K} A^k H W_k, evaluated as H W_0 + A (H W_1) + A (A (H W_2)) ...
Var gnn_khop(Var adjacency, Var h, std::span<const Var> hop_weights);

struct GnnKhop {
  std::vector<ParamId> hop_weights;  // K + 1 matrices, in x out
  std::size_t in = 0, out = 0;

  static GnnKhop create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                        std::size_t hops, Rng& rng);
  std::size_t hops() const { return hop_weights.size() - 1; }
  Var operator()(const Bound& p, Var adjacency, Var h) const;
};

/// GRU whose gate maps are K-hop graph convolutions over [x, h]:
///   z = sigmoid(G_z([x, h]) + b_z), r = sigmoid(G_r([x, h]) + b_r)
///   c = tanh(G_c([x, r*h]) + b_c),  h' = z*h + (1-z)*c
struct GnnGruCell {
  GnnKhop update, reset, candidate;
  ParamId update_bias, reset_bias, candidate_bias;
  std::size_t input_dim = 0, hidden_dim = 0;

  static GnnGruCell create(ParamStore& store, const std::string& name, std::size_t input_dim,
                           std::size_t hidden_dim, std::size_t hops, Rng& rng);
  Var step(const Bound& p, Var x, Var h_prev, Var adjacency) const;
};

/// Single-head scaled dot-product attention with learned query/key/value
/// projections: softmax(Q K^T / sqrt(d)) V.
struct Attention {
  Linear query, key, value;
  std::size_t key_dim = 0;

  static Attention create(ParamStore& store, const std::string& name, std::size_t query_dim, std::size_t key_dim,
                          std::size_t value_in, std::size_t value_out, Rng& rng);
  Var weights(const Bound& p, Var queries, Var keys) const;
  Var operator()(const Bound& p, Var queries, Var keys, Var values) const;
  /// Same, but query row r only attends to key columns where mask(r, c) != 0.
  Var masked(const Bound& p, Var queries, Var keys, Var values, const Tensor& mask) const;
};

/// Global memory attention, wind-neighbourhood local attention and their fusion.
struct MemoryAugmentedAttention {
  ParamId memory;  // m x d_e
  Attention global;
  Attention local;
  Mlp local_mlp;
  Mlp fusion;
  std::size_t hidden_dim = 0, units = 0;

  static MemoryAugmentedAttention create(ParamStore& store, const std::string& name, std::size_t hidden_dim,
                                         std::size_t units, Rng& rng);

  /// Attention(h_e, M_g, M_g).
  Var global_features(const Bound& p, Var h_e) const;

  /// Station i attends over its own and its wind neighbours' states across the
  /// window (oldest first, the last entry is the query time). Returns 1 x d_e.
  Var local_features_station(const Bound& p, std::span<const Var> window, const geo::Graph& advection,
                             std::size_t i) const;
  /// All stations at once via a neighbourhood mask; row i equals
  /// local_features_station(..., i).
  Var local_features(const Bound& p, std::span<const Var> window, const geo::Graph& advection) const;

  Var fuse(const Bound& p, Var h_e, Var h_g, Var h_l) const;
};

/// Neighbourhood mask for local attention over a window of `steps` stacked
/// N-row blocks: mask(i, s*N + j) = 1 when j == i or edge j -> i exists.
Tensor local_attention_mask(const geo::Graph& advection, std::size_t steps);

}  // namespace airdde::nn
