#include "airdde/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace airdde::nn {

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, bool with_bias,
                      Rng& rng) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add_uniform(name + ".weight", {in, out}, in, rng);
  if (with_bias) l.bias = store.add_uniform(name + ".bias", {1, out}, in, rng);
  return l;
}

Var Linear::operator()(const Bound& p, Var x) const {
  Var y = ad::matmul(x, p[weight]);
  return bias.valid() ? ad::add(y, p[bias]) : y;
}

Mlp Mlp::create(ParamStore& store, const std::string& name, const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("mlp needs at least input and output widths");
  Mlp m;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    m.layers.push_back(Linear::create(store, name + ".layer" + std::to_string(k), widths[k], widths[k + 1], true, rng));
  }
  return m;
}

Var Mlp::operator()(const Bound& p, Var x) const {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    x = layers[k](p, x);
    if (k + 1 < layers.size()) x = ad::relu(x);
  }
  return x;
}

Var gnn_khop(Var adjacency, Var h, std::span<const Var> hop_weights) {
  if (hop_weights.size() < 2) throw ShapeError("gnn_khop: need at least one hop (K >= 1)");
  const auto& a = adjacency.value();
  if (a.rank() != 2 || a.rows() != a.cols() || a.cols() != h.rows()) {
    throw ShapeError("gnn_khop: adjacency " + shape_to_string(a.shape()) + " does not match features " +
                     shape_to_string(h.shape()));
  }
  Var out = ad::matmul(h, hop_weights[0]);
  for (std::size_t k = 1; k < hop_weights.size(); ++k) {
    Var term = ad::matmul(h, hop_weights[k]);
    for (std::size_t r = 0; r < k; ++r) term = ad::matmul(adjacency, term);
    out = ad::add(out, term);
  }
  return out;
}

GnnKhop GnnKhop::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                        std::size_t hops, Rng& rng) {
  if (hops < 1) throw std::invalid_argument("gnn: hop count must be at least 1");
  GnnKhop g;
  g.in = in;
  g.out = out;
  for (std::size_t k = 0; k <= hops; ++k) {
    g.hop_weights.push_back(store.add_uniform(name + ".w" + std::to_string(k), {in, out}, in, rng));
  }
  return g;
}

Var GnnKhop::operator()(const Bound& p, Var adjacency, Var h) const {
  std::vector<Var> w;
  w.reserve(hop_weights.size());
  for (auto id : hop_weights) w.push_back(p[id]);
  return gnn_khop(adjacency, h, w);
}

GnnGruCell GnnGruCell::create(ParamStore& store, const std::string& name, std::size_t input_dim,
                              std::size_t hidden_dim, std::size_t hops, Rng& rng) {
  GnnGruCell c;
  c.input_dim = input_dim;
  c.hidden_dim = hidden_dim;
  const std::size_t in = input_dim + hidden_dim;
  c.update = GnnKhop::create(store, name + ".update", in, hidden_dim, hops, rng);
  c.reset = GnnKhop::create(store, name + ".reset", in, hidden_dim, hops, rng);
  c.candidate = GnnKhop::create(store, name + ".candidate", in, hidden_dim, hops, rng);
  c.update_bias = store.add_uniform(name + ".update_bias", {1, hidden_dim}, in, rng);
  c.reset_bias = store.add_uniform(name + ".reset_bias", {1, hidden_dim}, in, rng);
  c.candidate_bias = store.add_uniform(name + ".candidate_bias", {1, hidden_dim}, in, rng);
  return c;
}

Var GnnGruCell::step(const Bound& p, Var x, Var h_prev, Var adjacency) const {
  if (x.cols() != input_dim || h_prev.cols() != hidden_dim || x.rows() != h_prev.rows()) {
    throw ShapeError("gnn_gru_step: got x " + shape_to_string(x.shape()) + " and h " + shape_to_string(h_prev.shape()) +
                     ", cell expects widths " + std::to_string(input_dim) + "/" + std::to_string(hidden_dim));
  }
  Var xh = ad::concat_cols({x, h_prev});
  Var z = ad::sigmoid(ad::add(update(p, adjacency, xh), p[update_bias]));
  Var r = ad::sigmoid(ad::add(reset(p, adjacency, xh), p[reset_bias]));
  Var xrh = ad::concat_cols({x, ad::mul(r, h_prev)});
  Var c = ad::tanh(ad::add(candidate(p, adjacency, xrh), p[candidate_bias]));
  Var keep = ad::add_scalar(ad::scale(z, -1.0), 1.0);
  return ad::add(ad::mul(z, h_prev), ad::mul(keep, c));
}

Attention Attention::create(ParamStore& store, const std::string& name, std::size_t query_dim, std::size_t key_dim,
                            std::size_t value_in, std::size_t value_out, Rng& rng) {
  Attention a;
  a.key_dim = value_out;
  a.query = Linear::create(store, name + ".query", query_dim, value_out, false, rng);
  a.key = Linear::create(store, name + ".key", key_dim, value_out, false, rng);
  a.value = Linear::create(store, name + ".value", value_in, value_out, false, rng);
  return a;
}

Var Attention::weights(const Bound& p, Var queries, Var keys) const {
  if (keys.rows() == 0) throw ShapeError("attention: empty key set");
  Var q = query(p, queries);
  Var k = key(p, keys);
  Var scores = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(key_dim)));
  return ad::softmax_rows(scores);
}

Var Attention::operator()(const Bound& p, Var queries, Var keys, Var values) const {
  if (keys.rows() != values.rows()) {
    throw ShapeError("attention: keys " + shape_to_string(keys.shape()) + " and values " +
                     shape_to_string(values.shape()) + " differ in row count");
  }
  return ad::matmul(weights(p, queries, keys), value(p, values));
}

Var Attention::masked(const Bound& p, Var queries, Var keys, Var values, const Tensor& mask) const {
  if (keys.rows() != values.rows()) {
    throw ShapeError("attention: keys " + shape_to_string(keys.shape()) + " and values " +
                     shape_to_string(values.shape()) + " differ in row count");
  }
  Var q = query(p, queries);
  Var k = key(p, keys);
  Var scores = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(key_dim)));
  return ad::matmul(ad::masked_softmax_rows(scores, mask), value(p, values));
}

MemoryAugmentedAttention MemoryAugmentedAttention::create(ParamStore& store, const std::string& name,
                                                          std::size_t hidden_dim, std::size_t units, Rng& rng) {
  if (units < 1) throw std::invalid_argument("global memory needs at least one unit");
  MemoryAugmentedAttention m;
  m.hidden_dim = hidden_dim;
  m.units = units;
  m.memory = store.add_uniform(name + ".memory", {units, hidden_dim}, hidden_dim, rng);
  m.global = Attention::create(store, name + ".global", hidden_dim, hidden_dim, hidden_dim, hidden_dim, rng);
  m.local = Attention::create(store, name + ".local", hidden_dim, hidden_dim, hidden_dim, hidden_dim, rng);
  m.local_mlp = Mlp::create(store, name + ".local_mlp", {hidden_dim, hidden_dim, hidden_dim}, rng);
  m.fusion = Mlp::create(store, name + ".fusion", {3 * hidden_dim, hidden_dim, hidden_dim}, rng);
  return m;
}

Var MemoryAugmentedAttention::global_features(const Bound& p, Var h_e) const {
  Var mem = p[memory];
  return global(p, h_e, mem, mem);
}

Var MemoryAugmentedAttention::local_features_station(const Bound& p, std::span<const Var> window,
                                                     const geo::Graph& advection, std::size_t i) const {
  if (window.empty()) throw std::invalid_argument("local attention: empty window");
  std::vector<std::size_t> members{i};
  for (auto j : geo::neighbor_set(advection, i)) members.push_back(j);
  std::vector<Var> rows;
  for (const Var& step : window) rows.push_back(ad::gather_rows(step, members));
  Var keys = ad::concat_rows(rows);
  const std::size_t qi[] = {i};
  Var q = ad::gather_rows(window.back(), qi);
  return local_mlp(p, local(p, q, keys, keys));
}

Tensor local_attention_mask(const geo::Graph& advection, std::size_t steps) {
  const std::size_t n = advection.size();
  Tensor mask({n, steps * n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < steps; ++s) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i || advection(i, j) != 0.0) mask(i, s * n + j) = 1.0;
      }
    }
  }
  return mask;
}

Var MemoryAugmentedAttention::local_features(const Bound& p, std::span<const Var> window,
                                             const geo::Graph& advection) const {
  if (window.empty()) throw std::invalid_argument("local attention: empty window");
  Var keys = window.size() == 1 ? window.front() : ad::concat_rows(window);
  const Tensor mask = local_attention_mask(advection, window.size());
  return local_mlp(p, local.masked(p, window.back(), keys, keys, mask));
}

Var MemoryAugmentedAttention::fuse(const Bound& p, Var h_e, Var h_g, Var h_l) const {
  if (h_e.rows() != h_g.rows() || h_e.rows() != h_l.rows()) {
    throw ShapeError("maa_fuse: row counts differ: " + shape_to_string(h_e.shape()) + ", " +
                     shape_to_string(h_g.shape()) + ", " + shape_to_string(h_l.shape()));
  }
  return fusion(p, ad::concat_cols({h_e, h_g, h_l}));
}

}  // namespace airdde::nn
