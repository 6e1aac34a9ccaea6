#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "airdde/blocks.hpp"

using namespace airdde;
using namespace airdde::nn;
using ad::Tape;

namespace {

// Plain nested-loop linear algebra for the oracles.
Tensor mm(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

Tensor plus(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) += b.rows() == 1 ? b(0, j) : b(i, j);
  return out;
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out = a;
  for (auto& v : out.values()) v = f(v);
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t k = 0; k < a.numel(); ++k) out[k] *= b[k];
  return out;
}

Tensor hcat(std::initializer_list<Tensor> parts) {
  std::size_t cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Tensor out({parts.begin()->rows(), cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p(i, j);
    off += p.cols();
  }
  return out;
}

Tensor transposed(const Tensor& a) {
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Tensor softmax(const Tensor& s) {
  Tensor out = s;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double mx = -1e300, total = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) mx = std::max(mx, s(i, j));
    for (std::size_t j = 0; j < s.cols(); ++j) total += (out(i, j) = std::exp(s(i, j) - mx));
    for (std::size_t j = 0; j < s.cols(); ++j) out(i, j) /= total;
  }
  return out;
}

ad::Var khop(ad::Var a, ad::Var h, std::vector<ad::Var> w) { return gnn_khop(a, h, w); }

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double relu(double x) { return x > 0 ? x : 0.0; }

Tensor attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& wq, const Tensor& wk,
                        const Tensor& wv) {
  Tensor scores = mm(mm(q, wq), transposed(mm(k, wk)));
  for (auto& x : scores.values()) x /= std::sqrt(static_cast<double>(wq.cols()));
  return mm(softmax(scores), mm(v, wv));
}

Tensor mlp_oracle(const ParamStore& ps, const Mlp& m, Tensor x) {
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    x = plus(mm(x, ps.at(m.layers[k].weight)), ps.at(m.layers[k].bias));
    if (k + 1 < m.layers.size()) x = map(x, relu);
  }
  return x;
}

Tensor khop_oracle(const Tensor& a, const Tensor& h, const std::vector<Tensor>& w) {
  Tensor out = mm(h, w[0]);
  Tensor ak = Tensor::identity(a.rows());
  for (std::size_t k = 1; k < w.size(); ++k) {
    ak = mm(ak, a);
    out = plus(out, mm(mm(ak, h), w[k]));
  }
  return out;
}

Tensor rnd(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01;
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * n01(rng);
  return t;
}

void expect_close(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t k = 0; k < a.numel(); ++k) EXPECT_NEAR(a[k], b[k], tol) << "index " << k;
}

std::vector<Tensor> hop_tensors(const ParamStore& ps, const GnnKhop& g) {
  std::vector<Tensor> w;
  for (auto id : g.hop_weights) w.push_back(ps.at(id));
  return w;
}

geo::Graph random_binary_graph(std::size_t n, std::mt19937_64& rng, double p = 0.4) {
  std::bernoulli_distribution e(p);
  geo::Graph g{Tensor({n, n}), true};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && e(rng)) g.weights(i, j) = 1.0;
  return g;
}

double max_group_error(const std::function<ad::Var(const Bound&)>& loss, ParamStore& ps) {
  double worst = 0.0;
  for (const auto& g : check_parameter_gradients(loss, ps)) worst = std::max(worst, g.max_rel_error);
  return worst;
}

}  // namespace

TEST(Linear, InitWithinFanInBound) {
  ParamStore ps;
  Rng rng(1);
  Linear l = Linear::create(ps, "lin", 9, 4, true, rng);
  for (double v : ps.at(l.weight).values()) EXPECT_LE(std::abs(v), 1.0 / 3.0);
  for (double v : ps.at(l.bias).values()) EXPECT_LE(std::abs(v), 1.0 / 3.0);
  EXPECT_EQ(ps.names(), (std::vector<std::string>{"lin.weight", "lin.bias"}));
}

TEST(GnnKhop, ZeroAdjacencyKeepsSelfTerm) {
  std::mt19937_64 rng(2);
  Tape tape;
  const Tensor h = rnd({4, 3}, rng), w0 = rnd({3, 2}, rng), w1 = rnd({3, 2}, rng);
  ad::Var out = khop(tape.constant(Tensor({4, 4})), tape.constant(h), {tape.constant(w0), tape.constant(w1)});
  EXPECT_EQ(out.value(), mm(h, w0));
}

TEST(GnnKhop, IdentityPropagation) {
  std::mt19937_64 rng(3);
  Tape tape;
  const Tensor h = rnd({4, 3}, rng);
  ad::Var out = khop(tape.constant(Tensor::identity(4)), tape.constant(h),
                     {tape.constant(Tensor({3, 3})), tape.constant(Tensor::identity(3))});
  EXPECT_EQ(out.value(), h);
}

TEST(GnnKhop, MatchesMatrixPowers) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    const Tensor a = rnd({5, 5}, rng), h = rnd({5, 3}, rng);
    const std::vector<Tensor> w{rnd({3, 4}, rng), rnd({3, 4}, rng), rnd({3, 4}, rng)};
    ad::Var out = khop(tape.constant(a), tape.constant(h),
                       {tape.constant(w[0]), tape.constant(w[1]), tape.constant(w[2])});
    expect_close(out.value(), khop_oracle(a, h, w), 1e-12);
  }
}

TEST(GnnKhop, LinearInFeatures) {
  std::mt19937_64 rng(5);
  ParamStore ps;
  Rng init(5);
  GnnKhop g = GnnKhop::create(ps, "g", 3, 4, 2, init);
  const Tensor a = rnd({5, 5}, rng), h1 = rnd({5, 3}, rng), h2 = rnd({5, 3}, rng);
  const double alpha = 0.7, beta = -1.3;
  Tape tape;
  Bound p(tape, ps, false);
  ad::Var A = tape.constant(a);
  ad::Var combo = g(p, A, ad::lincomb({tape.constant(h1), tape.constant(h2)}, {alpha, beta}));
  ad::Var sep = ad::lincomb({g(p, A, tape.constant(h1)), g(p, A, tape.constant(h2))}, {alpha, beta});
  expect_close(combo.value(), sep.value(), 1e-10);
}

TEST(GnnKhop, DimensionMismatch) {
  Tape tape;
  EXPECT_THROW(khop(tape.constant(Tensor({4, 4})), tape.constant(Tensor({5, 3})),
                        {tape.constant(Tensor({3, 2})), tape.constant(Tensor({3, 2}))}),
               ShapeError);
  EXPECT_THROW(khop(tape.constant(Tensor({4, 4})), tape.constant(Tensor({4, 3})),
                        {tape.constant(Tensor({2, 2})), tape.constant(Tensor({2, 2}))}),
               ShapeError);
}

TEST(GnnGru, UpdateGateSaturated) {
  std::mt19937_64 rng(6);
  ParamStore ps;
  Rng init(6);
  GnnGruCell cell = GnnGruCell::create(ps, "gru", 2, 3, 2, init);
  const Tensor x = rnd({4, 2}, rng, 0.1), h = rnd({4, 3}, rng, 0.1), a = geo::row_normalized(rnd({4, 4}, rng));
  ps.at(cell.update_bias).fill(1e3);
  {
    Tape tape;
    Bound p(tape, ps, false);
    EXPECT_EQ(cell.step(p, tape.constant(x), tape.constant(h), tape.constant(a)).value(), h);
  }
  ps.at(cell.update_bias).fill(-1e3);
  Tape tape;
  Bound p(tape, ps, false);
  const Tensor out = cell.step(p, tape.constant(x), tape.constant(h), tape.constant(a)).value();
  const Tensor r = map(plus(khop_oracle(a, hcat({x, h}), hop_tensors(ps, cell.reset)), ps.at(cell.reset_bias)), sigm);
  const Tensor c = map(plus(khop_oracle(a, hcat({x, hadamard(r, h)}), hop_tensors(ps, cell.candidate)),
                            ps.at(cell.candidate_bias)),
                       [](double v) { return std::tanh(v); });
  expect_close(out, c, 1e-12);
}

TEST(GnnGru, MatchesHandExpandedGates) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    ParamStore ps;
    Rng init(trial);
    GnnGruCell cell = GnnGruCell::create(ps, "gru", 3, 4, 2, init);
    const Tensor x = rnd({5, 3}, rng), h = rnd({5, 4}, rng), a = rnd({5, 5}, rng, 0.3);
    Tape tape;
    Bound p(tape, ps, false);
    const Tensor out = cell.step(p, tape.constant(x), tape.constant(h), tape.constant(a)).value();
    const Tensor xh = hcat({x, h});
    const Tensor z = map(plus(khop_oracle(a, xh, hop_tensors(ps, cell.update)), ps.at(cell.update_bias)), sigm);
    const Tensor r = map(plus(khop_oracle(a, xh, hop_tensors(ps, cell.reset)), ps.at(cell.reset_bias)), sigm);
    const Tensor c = map(plus(khop_oracle(a, hcat({x, hadamard(r, h)}), hop_tensors(ps, cell.candidate)),
                              ps.at(cell.candidate_bias)),
                         [](double v) { return std::tanh(v); });
    Tensor expected = h;
    for (std::size_t k = 0; k < expected.numel(); ++k) expected[k] = z[k] * h[k] + (1.0 - z[k]) * c[k];
    expect_close(out, expected, 1e-12);
  }
}

TEST(GnnGru, DimensionMismatch) {
  ParamStore ps;
  Rng init(8);
  GnnGruCell cell = GnnGruCell::create(ps, "gru", 2, 3, 1, init);
  Tape tape;
  Bound p(tape, ps, false);
  EXPECT_THROW(cell.step(p, tape.constant(Tensor({4, 3})), tape.constant(Tensor({4, 3})), tape.constant(Tensor({4, 4}))),
               ShapeError);
}

TEST(Attention, SingleKeyReturnsProjectedValue) {
  std::mt19937_64 rng(9);
  ParamStore ps;
  Rng init(9);
  Attention att = Attention::create(ps, "att", 3, 3, 3, 3, init);
  const Tensor q = rnd({4, 3}, rng), kv = rnd({1, 3}, rng);
  Tape tape;
  Bound p(tape, ps, false);
  const Tensor out = att(p, tape.constant(q), tape.constant(kv), tape.constant(kv)).value();
  const Tensor v = mm(kv, ps.at(att.value.weight));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out(i, j), v(0, j), 1e-15);
}

TEST(Attention, IdenticalKeysAverageValues) {
  std::mt19937_64 rng(10);
  ParamStore ps;
  Rng init(10);
  Attention att = Attention::create(ps, "att", 3, 3, 2, 2, init);
  const Tensor q = rnd({2, 3}, rng), values = rnd({4, 2}, rng);
  Tensor keys({4, 3});
  const Tensor key = rnd({1, 3}, rng);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) keys(r, c) = key(0, c);
  Tape tape;
  Bound p(tape, ps, false);
  const Tensor out = att(p, tape.constant(q), tape.constant(keys), tape.constant(values)).value();
  const Tensor v = mm(values, ps.at(att.value.weight));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out(i, j), (v(0, j) + v(1, j) + v(2, j) + v(3, j)) / 4.0, 1e-14);
}

TEST(Attention, MatchesDirectFormulaAndIsDistribution) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore ps;
    Rng init(trial);
    Attention att = Attention::create(ps, "att", 5, 5, 5, 5, init);
    const Tensor q = rnd({3, 5}, rng), k = rnd({4, 5}, rng), v = rnd({4, 5}, rng);
    Tape tape;
    Bound p(tape, ps, false);
    const Tensor out = att(p, tape.constant(q), tape.constant(k), tape.constant(v)).value();
    expect_close(out, attention_oracle(q, k, v, ps.at(att.query.weight), ps.at(att.key.weight), ps.at(att.value.weight)),
                 1e-13);
    const Tensor w = att.weights(p, tape.constant(q), tape.constant(k)).value();
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_GE(w(i, j), 0.0);
        s += w(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Attention, InvariantToJointKeyValuePermutation) {
  std::mt19937_64 rng(12);
  ParamStore ps;
  Rng init(12);
  Attention att = Attention::create(ps, "att", 3, 3, 3, 3, init);
  const Tensor q = rnd({2, 3}, rng), k = rnd({5, 3}, rng), v = rnd({5, 3}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tape tape;
  Bound p(tape, ps, false);
  ad::Var K = tape.constant(k), V = tape.constant(v);
  const Tensor a = att(p, tape.constant(q), K, V).value();
  const Tensor b = att(p, tape.constant(q), ad::gather_rows(K, perm), ad::gather_rows(V, perm)).value();
  expect_close(a, b, 1e-14);
}

TEST(Attention, EmptyKeysAndRowMismatch) {
  ParamStore ps;
  Rng init(13);
  Attention att = Attention::create(ps, "att", 3, 3, 3, 3, init);
  Tape tape;
  Bound p(tape, ps, false);
  EXPECT_THROW(att(p, tape.constant(Tensor({2, 3})), tape.constant(Tensor({3, 3})), tape.constant(Tensor({2, 3}))),
               ShapeError);
}

TEST(MaaGlobal, SingleUnitAndIdenticalRows) {
  std::mt19937_64 rng(14);
  ParamStore ps;
  Rng init(14);
  auto maa = MemoryAugmentedAttention::create(ps, "maa", 4, 1, init);
  const Tensor h = rnd({5, 4}, rng);
  {
    Tape tape;
    Bound p(tape, ps, false);
    const Tensor out = maa.global_features(p, tape.constant(h)).value();
    const Tensor v = mm(ps.at(maa.memory), ps.at(maa.global.value.weight));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out(i, j), v(0, j), 1e-15);
  }
  ParamStore ps3;
  Rng init3(15);
  auto maa3 = MemoryAugmentedAttention::create(ps3, "maa", 4, 3, init3);
  Tensor& mem = ps3.at(maa3.memory);
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) mem(r, c) = mem(0, c);
  Tape tape;
  Bound p(tape, ps3, false);
  const Tensor out = maa3.global_features(p, tape.constant(h)).value();
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out(i, j), out(0, j), 1e-14);
}

TEST(MaaGlobal, MatchesDirectAttention) {
  std::mt19937_64 rng(16);
  ParamStore ps;
  Rng init(16);
  auto maa = MemoryAugmentedAttention::create(ps, "maa", 5, 3, init);
  const Tensor h = rnd({4, 5}, rng);
  Tape tape;
  Bound p(tape, ps, false);
  const Tensor& m = ps.at(maa.memory);
  expect_close(maa.global_features(p, tape.constant(h)).value(),
               attention_oracle(h, m, m, ps.at(maa.global.query.weight), ps.at(maa.global.key.weight),
                                ps.at(maa.global.value.weight)),
               1e-13);
  EXPECT_THROW(MemoryAugmentedAttention::create(ps, "zero", 5, 0, init), std::invalid_argument);
}

TEST(MaaLocal, NoNeighboursSingleStep) {
  std::mt19937_64 rng(17);
  ParamStore ps;
  Rng init(17);
  auto maa = MemoryAugmentedAttention::create(ps, "maa", 3, 2, init);
  const Tensor h = rnd({4, 3}, rng);
  const geo::Graph none{Tensor({4, 4}), true};
  Tape tape;
  Bound p(tape, ps, false);
  const ad::Var window[] = {tape.constant(h)};
  const Tensor out = maa.local_features(p, window, none).value();
  const Tensor expected = mlp_oracle(ps, maa.local_mlp, mm(h, ps.at(maa.local.value.weight)));
  expect_close(out, expected, 1e-14);
}

TEST(MaaLocal, IdenticalFeatures) {
  std::mt19937_64 rng(18);
  ParamStore ps;
  Rng init(18);
  auto maa = MemoryAugmentedAttention::create(ps, "maa", 3, 2, init);
  Tensor h({4, 3});
  const Tensor row = rnd({1, 3}, rng);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) h(i, c) = row(0, c);
  const geo::Graph g = random_binary_graph(4, rng, 0.7);
  Tape tape;
  Bound p(tape, ps, false);
  const ad::Var window[] = {tape.constant(h), tape.constant(h), tape.constant(h)};
  const Tensor out = maa.local_features(p, window, g).value();
  const Tensor v = mlp_oracle(ps, maa.local_mlp, mm(row, ps.at(maa.local.value.weight)));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out(i, c), v(0, c), 1e-14);
}

TEST(MaaLocal, TwoNeighboursTauTwoSixKeys) {
  std::mt19937_64 rng(19);
  ParamStore ps;
  Rng init(19);
  auto maa = MemoryAugmentedAttention::create(ps, "maa", 3, 2, init);
  const Tensor h0 = rnd({5, 3}, rng), h1 = rnd({5, 3}, rng);
  geo::Graph g{Tensor({5, 5}), true};
  g.weights(2, 0) = 1.0;
  g.weights(2, 4) = 1.0;
  Tensor keys({6, 3});
  const std::size_t members[] = {2, 0, 4};
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t c = 0; c < 3; ++c) keys(s * 3 + m, c) = (s == 0 ? h0 : h1)(members[m], c);
  Tensor q({1, 3});
  for (std::size_t c = 0; c < 3; ++c) q(0, c) = h1(2, c);
  const Tensor expected =
      mlp_oracle(ps, maa.local_mlp,
                 attention_oracle(q, keys, keys, ps.at(maa.local.query.weight), ps.at(maa.local.key.weight),
                                  ps.at(maa.local.value.weight)));
  Tape tape;
  Bound p(tape, ps, false);
  const ad::Var window[] = {tape.constant(h0), tape.constant(h1)};
  expect_close(maa.local_features_station(p, window, g, 2).value(), expected, 1e-13);
  const Tensor all = maa.local_features(p, window, g).value();
  Tensor row({1, 3});
  for (std::size_t c = 0; c < 3; ++c) row(0, c) = all(2, c);
  expect_close(row, expected, 1e-13);
}

TEST(MaaLocal, MaskedMatchesPerStation) {
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore ps;
    Rng init(trial);
    auto maa = MemoryAugmentedAttention::create(ps, "maa", 4, 2, init);
    const geo::Graph g = random_binary_graph(6, rng);
    Tape tape;
    Bound p(tape, ps, false);
    std::vector<ad::Var> window;
    for (int s = 0; s < 3; ++s) window.push_back(tape.constant(rnd({6, 4}, rng)));
    const Tensor all = maa.local_features(p, window, g).value();
    for (std::size_t i = 0; i < 6; ++i) {
      const Tensor one = maa.local_features_station(p, window, g, i).value();
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(all(i, c), one(0, c), 1e-13);
    }
  }
}

TEST(MaaFuse, BlockIdentitySelectsEncoderState) {
  std::mt19937_64 rng(21);
  ParamStore ps;
  Rng init(21);
  auto maa = MemoryAugmentedAttention::create(ps, "maa", 3, 2, init);
  maa.fusion = Mlp::create(ps, "single", {9, 3}, init);
  Tensor& w = ps.at(maa.fusion.layers[0].weight);
  w.fill(0.0);
  for (std::size_t c = 0; c < 3; ++c) w(c, c) = 1.0;
  ps.at(maa.fusion.layers[0].bias).fill(0.0);
  const Tensor he = rnd({4, 3}, rng);
  Tape tape;
  Bound p(tape, ps, false);
  EXPECT_EQ(maa.fuse(p, tape.constant(he), tape.constant(rnd({4, 3}, rng)), tape.constant(rnd({4, 3}, rng))).value(),
            he);
}

TEST(MaaFuse, ZeroWeightsGiveBias) {
  std::mt19937_64 rng(22);
  ParamStore ps;
  Rng init(22);
  auto maa = MemoryAugmentedAttention::create(ps, "maa", 3, 2, init);
  for (const auto& l : maa.fusion.layers) ps.at(l.weight).fill(0.0);
  const Tensor b = ps.at(maa.fusion.layers.back().bias);
  Tape tape;
  Bound p(tape, ps, false);
  const Tensor out =
      maa.fuse(p, tape.constant(rnd({4, 3}, rng)), tape.constant(rnd({4, 3}, rng)), tape.constant(rnd({4, 3}, rng)))
          .value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out(i, c), b(0, c));
}

TEST(MaaFuse, MatchesConcatThenMlp) {
  std::mt19937_64 rng(23);
  ParamStore ps;
  Rng init(23);
  auto maa = MemoryAugmentedAttention::create(ps, "maa", 3, 2, init);
  const Tensor a = rnd({4, 3}, rng), b = rnd({4, 3}, rng), c = rnd({4, 3}, rng);
  Tape tape;
  Bound p(tape, ps, false);
  expect_close(maa.fuse(p, tape.constant(a), tape.constant(b), tape.constant(c)).value(),
               mlp_oracle(ps, maa.fusion, hcat({a, b, c})), 1e-13);
  EXPECT_THROW(maa.fuse(p, tape.constant(a), tape.constant(Tensor({3, 3})), tape.constant(c)), ShapeError);
}

// Parameter gradients of every block at 1e-5, 10 seeds each.
TEST(BlockGradients, AllBlocksTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Tensor a = geo::row_normalized(map(rnd({4, 4}, rng), [](double v) { return std::abs(v); }));
    const Tensor x = rnd({4, 2}, rng), h = rnd({4, 3}, rng), weights = rnd({4, 3}, rng);
    const geo::Graph g = random_binary_graph(4, rng);
    auto reduce = [&](ad::Var y) { return ad::sum(ad::mul(y, y.tape()->constant(weights))); };

    {
      ParamStore ps;
      Rng init(seed);
      Mlp m = Mlp::create(ps, "mlp", {3, 5, 3}, init);
      EXPECT_LT(max_group_error([&](const Bound& p) { return reduce(m(p, p.tape().constant(h))); }, ps), 1e-5)
          << "mlp seed " << seed;
    }
    {
      ParamStore ps;
      Rng init(seed);
      GnnKhop k = GnnKhop::create(ps, "gnn", 3, 3, 2, init);
      auto loss = [&](const Bound& p) { return reduce(k(p, p.tape().constant(a), p.tape().constant(h))); };
      EXPECT_LT(max_group_error(loss, ps), 1e-5) << "gnn seed " << seed;
    }
    {
      ParamStore ps;
      Rng init(seed);
      GnnGruCell cell = GnnGruCell::create(ps, "gru", 2, 3, 2, init);
      auto loss = [&](const Bound& p) {
        ad::Tape& t = p.tape();
        ad::Var s = cell.step(p, t.constant(x), t.constant(h), t.constant(a));
        return reduce(cell.step(p, t.constant(x), s, t.constant(a)));
      };
      EXPECT_LT(max_group_error(loss, ps), 1e-5) << "gru seed " << seed;
    }
    {
      ParamStore ps;
      Rng init(seed);
      Attention att = Attention::create(ps, "att", 3, 3, 3, 3, init);
      const Tensor k = rnd({5, 3}, rng), v = rnd({5, 3}, rng);
      auto loss = [&](const Bound& p) {
        ad::Tape& t = p.tape();
        return reduce(att(p, t.constant(h), t.constant(k), t.constant(v)));
      };
      EXPECT_LT(max_group_error(loss, ps), 1e-5) << "attention seed " << seed;
    }
    {
      ParamStore ps;
      Rng init(seed);
      auto maa = MemoryAugmentedAttention::create(ps, "maa", 3, 2, init);
      const Tensor h0 = rnd({4, 3}, rng);
      auto loss = [&](const Bound& p) {
        ad::Tape& t = p.tape();
        ad::Var he = t.constant(h);
        const ad::Var window[] = {t.constant(h0), he};
        return reduce(maa.fuse(p, he, maa.global_features(p, he), maa.local_features(p, window, g)));
      };
      EXPECT_LT(max_group_error(loss, ps), 1e-5) << "maa seed " << seed;
    }
  }
}

// Input gradients through the same blocks.
TEST(BlockGradients, InputGradients) {
  std::mt19937_64 rng(200);
  ParamStore ps;
  Rng init(200);
  GnnGruCell cell = GnnGruCell::create(ps, "gru", 2, 3, 2, init);
  auto maa = MemoryAugmentedAttention::create(ps, "maa", 3, 2, init);
  const Tensor a = geo::row_normalized(map(rnd({4, 4}, rng), [](double v) { return std::abs(v); }));
  const Tensor x = rnd({4, 2}, rng);
  const geo::Graph g = random_binary_graph(4, rng);
  ad::ScalarFn f = [&](ad::Tape& t, ad::Var h) {
    Bound p(t, ps, false);
    ad::Var s = cell.step(p, t.constant(x), h, t.constant(a));
    const ad::Var window[] = {h, s};
    return ad::sum(ad::square(maa.fuse(p, s, maa.global_features(p, s), maa.local_features(p, window, g))));
  };
  EXPECT_LT(ad::grad_check(f, rnd({4, 3}, rng), 1e-5), 1e-6);
}
