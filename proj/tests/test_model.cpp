#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "airdde/model.hpp"
#include "airdde/oracle.hpp"

using namespace airdde;
using namespace airdde::model;
using ad::Tape;

namespace {

struct Toy {
  data::Dataset data;
  data::NormStats norm;
  std::vector<data::WindowSample> windows;
  ModelConfig config;
};

Toy make_toy(std::size_t n, std::size_t t, std::size_t h, std::size_t tau, std::uint64_t seed = 2) {
  Toy toy;
  toy.data = oracle::simulate_transport(oracle::acceptance_config(seed, n, 60));
  toy.norm = data::NormStats::fit(toy.data.slice(0, 30));
  toy.windows = data::make_windows(toy.data, {t, h, 3, static_cast<int>(tau)});
  ModelConfig& c = toy.config;
  c.N = n;
  c.T = t;
  c.H = h;
  c.tau = tau;
  c.d = 3;
  c.d_e = 4;
  c.K = 2;
  c.m = 3;
  c.substeps = 2;
  c.feature_dim = 2;
  return toy;
}

void zero_mlp(ParamStore& ps, const nn::Mlp& m) {
  for (const auto& l : m.layers) {
    ps.at(l.weight).fill(0.0);
    ps.at(l.bias).fill(0.0);
  }
}

void zero_khop(ParamStore& ps, const nn::GnnKhop& g) {
  for (auto id : g.hop_weights) ps.at(id).fill(0.0);
}

}  // namespace

TEST(Huber, Examples) {
  EXPECT_EQ(huber_value(0.5, 1.0), 0.125);
  EXPECT_EQ(huber_value(2.0, 1.0), 1.5);
  EXPECT_EQ(huber_value(-2.0, 1.0), 1.5);
  for (double d : {0.05, 0.3, 1.0, 4.0}) {
    EXPECT_DOUBLE_EQ(huber_value(d, d), d * d / 2.0);
    EXPECT_DOUBLE_EQ(d * d - 0.5 * d * d, d * d / 2.0);  // linear branch at |r| = d
  }
  Tape tape;
  Var p = tape.constant(Tensor::matrix({{0.5, 2.0}, {-3.0, 0.0}}));
  Var y = tape.constant(Tensor::matrix({{0.0, 0.0}, {0.0, 0.0}}));
  EXPECT_DOUBLE_EQ(huber_loss(p, y, 1.0).value()[0], (0.125 + 1.5 + 2.5 + 0.0) / 4.0);
  EXPECT_EQ(huber_loss(p, p, 1.0).value()[0], 0.0);
  EXPECT_THROW(huber_loss(p, y, 0.0), std::invalid_argument);
  EXPECT_THROW(huber_loss(p, tape.constant(Tensor({2, 3})), 1.0), ShapeError);
}

TEST(Huber, NonNegativeAndGradient) {
  Rng rng(3);
  std::normal_distribution<double> n01;
  for (int k = 0; k < 20; ++k) {
    Tensor a({3, 4}), b({3, 4});
    for (auto& v : a.values()) v = 3.0 * n01(rng);
    for (auto& v : b.values()) v = 3.0 * n01(rng);
    Tape tape;
    EXPECT_GE(huber_loss(tape.constant(a), tape.constant(b), 0.7).value()[0], 0.0);
    ad::ScalarFn f = [&](Tape& t, Var x) { return huber_loss(x, t.constant(b), 0.7); };
    EXPECT_LT(ad::grad_check(f, a, 1e-6), 1e-6);
  }
}

TEST(Model, ConfigValidation) {
  ModelConfig c;
  c.tau = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.T = 2;
  c.tau = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.delta = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.H = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Model, EncodeMatchesUnrolledSteps) {
  Toy toy = make_toy(4, 6, 3, 2);
  AirDde m(toy.config, toy.data.stations, toy.norm, 5);
  const auto& s = toy.windows.at(4);
  Tape tape;
  Bound p(tape, m.params(), false);
  Var a = geo::adaptive_adjacency(p[m.embedding1()], p[m.embedding2()]);
  const Tensor in = m.normalized_inputs(s);
  const auto states = m.encode(p, a, in);
  ASSERT_EQ(states.size(), 7u);
  Var h = tape.constant(Tensor({4, 4}));
  EXPECT_EQ(states[0].value(), h.value());
  for (std::size_t k = 0; k < 6; ++k) {
    Tensor x({4, 3});
    for (std::size_t i = 0; i < 4; ++i) {
      x(i, 0) = m.norm().normalize(0, s.inputs(i, k));
      for (std::size_t c = 0; c < 2; ++c) x(i, 1 + c) = m.norm().normalize(1 + c, s.features.at3(i, k, c));
    }
    h = m.encoder_cell().step(p, tape.constant(x), h, a);
    EXPECT_EQ(states[k + 1].value(), h.value()) << k;
  }
}

TEST(Model, EncodeSingleStepAndZeroFixedPoint) {
  Toy toy = make_toy(4, 1, 1, 1);
  AirDde m(toy.config, toy.data.stations, toy.norm, 6);
  const auto& s = toy.windows.at(0);
  {
    Tape tape;
    Bound p(tape, m.params(), false);
    Var a = geo::adaptive_adjacency(p[m.embedding1()], p[m.embedding2()]);
    const auto states = m.encode(p, a, m.normalized_inputs(s));
    ASSERT_EQ(states.size(), 2u);
    Var x = tape.constant([&] {
      const Tensor in = m.normalized_inputs(s);
      Tensor x({4, 3});
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 3; ++c) x(i, c) = in.at3(i, 0, c);
      return x;
    }());
    EXPECT_EQ(states[1].value(), m.encoder_cell().step(p, x, tape.constant(Tensor({4, 4})), a).value());
  }
  for (auto& t : m.params().tensors()) t.fill(0.0);
  Tape tape;
  Bound p(tape, m.params(), false);
  Var a = geo::adaptive_adjacency(p[m.embedding1()], p[m.embedding2()]);
  const auto states = m.encode(p, a, Tensor({4, 1, 3}));
  for (const auto& st : states)
    for (double v : st.value().values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(m.encode(p, a, Tensor({4, 2, 3})), ShapeError);
}

TEST(Model, InitStatesComposition) {
  for (std::size_t tau : {1u, 2u, 3u}) {
    Toy toy = make_toy(4, 6, 3, tau);
    AirDde m(toy.config, toy.data.stations, toy.norm, 7 + tau);
    const auto& s = toy.windows.at(3);
    Tape tape;
    Bound p(tape, m.params(), false);
    Var a = geo::adaptive_adjacency(p[m.embedding1()], p[m.embedding2()]);
    const auto enc = m.encode(p, a, m.normalized_inputs(s));
    const auto init = m.init_states(p, enc, s);
    ASSERT_EQ(init.size(), tau + 1);
    for (std::size_t k = 0; k <= tau; ++k) {
      const std::size_t g = 6 - tau + k;
      const std::size_t first = g + 1 >= tau ? g + 1 - tau : 0;
      std::vector<Var> window(enc.begin() + static_cast<long>(first), enc.begin() + static_cast<long>(g) + 1);
      const auto& maa = m.maa();
      Var hg = maa.global_features(p, enc[g]);
      Var hl = maa.local_features(p, window, s.graph(g - 1));
      EXPECT_EQ(init[k].value(), maa.fuse(p, enc[g], hg, hl).value()) << tau << " " << k;
    }
  }
}

TEST(Model, InitStatesFusionBias) {
  Toy toy = make_toy(4, 6, 3, 2);
  AirDde m(toy.config, toy.data.stations, toy.norm, 9);
  zero_mlp(m.params(), m.maa().fusion);
  Tensor& b = m.params().at(m.maa().fusion.layers.back().bias);
  for (std::size_t c = 0; c < b.numel(); ++c) b[c] = 0.25 * static_cast<double>(c) - 0.3;
  const auto& s = toy.windows.at(2);
  Tape tape;
  Bound p(tape, m.params(), false);
  Var a = geo::adaptive_adjacency(p[m.embedding1()], p[m.embedding2()]);
  const auto init = m.init_states(p, m.encode(p, a, m.normalized_inputs(s)), s);
  for (const auto& st : init)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(st.value()(i, c), b[c]);
}

TEST(Model, ForwardMatchesStagedOracle) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Toy toy = make_toy(4, 6, 3, 2);
    AirDde m(toy.config, toy.data.stations, toy.norm, 20 + seed);
    const auto& s = toy.windows.at(1 + seed);
    Tape tape;
    Bound p(tape, m.params(), false);
    ForwardTrace trace;
    const Tensor pred = m.forward(p, s, &trace).value();
    ASSERT_EQ(pred.shape(), (Shape{4, 3}));

    Var a = geo::adaptive_adjacency(p[m.embedding1()], p[m.embedding2()]);
    const auto enc = m.encode(p, a, m.normalized_inputs(s));
    const auto init = m.init_states(p, enc, s);
    Var ad_ = tape.constant(m.diffusion_graph());
    Var av = tape.constant(geo::row_normalized(s.graph(5).weights));
    Var cov = tape.constant(m.normalized_features(s, 5));
    dde::Rhs f = [&](double t, Var h, const dde::HistoryBuffer& hist) {
      return m.evolution()(p, t, h, hist, ad_, av, cov);
    };
    dde::SolveOptions o;
    o.t0 = 6.0;
    o.horizon = 3;
    o.substeps = 2;
    o.tau = 2.0;
    const Var past[] = {init[0], init[1]};
    const auto solved = dde::solve_dde(f, init[2], past, o);
    Var state = init[2];
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(trace.solved[k].value(), solved[k].value());
      state = m.decoder_cell().step(p, solved[k], state, a);
      const Tensor out = m.output_head()(p, state).value();
      for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(pred(i, k), out(i, 0)) << seed << " " << k;
    }
  }
}

TEST(Model, FrozenDynamicsGiveConstantForecast) {
  Toy toy = make_toy(4, 6, 5, 2);
  AirDde m(toy.config, toy.data.stations, toy.norm, 11);
  ParamStore& ps = m.params();
  zero_khop(ps, m.evolution().diffusion);
  zero_khop(ps, m.evolution().advection);
  zero_mlp(ps, m.evolution().source);
  // decoder copies the latent: update gate shut, candidate = tanh(h)
  const auto& dec = m.decoder_cell();
  zero_khop(ps, dec.update);
  zero_khop(ps, dec.reset);
  zero_khop(ps, dec.candidate);
  ps.at(dec.update_bias).fill(-1000.0);
  ps.at(dec.candidate_bias).fill(0.0);
  Tensor& w0 = ps.at(dec.candidate.hop_weights[0]);
  for (std::size_t c = 0; c < 4; ++c) w0(c, c) = 1.0;

  const Tensor f = m.forecast(toy.windows.at(2));
  ASSERT_EQ(f.shape(), (Shape{4, 5}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 1; k < 5; ++k) EXPECT_EQ(f(i, k), f(i, 0));
}

TEST(Model, HorizonOne) {
  Toy toy = make_toy(4, 6, 1, 2);
  AirDde m(toy.config, toy.data.stations, toy.norm, 12);
  Tape tape;
  Bound p(tape, m.params(), false);
  ForwardTrace trace;
  const Tensor pred = m.forward(p, toy.windows.at(0), &trace).value();
  EXPECT_EQ(pred.shape(), (Shape{4, 1}));
  EXPECT_EQ(trace.solved.size(), 1u);
  EXPECT_EQ(trace.decoder.size(), 1u);
  // history: tau past knots, the initial state, two substeps
  EXPECT_EQ(trace.history.knots().size(), 2u + 1u + 2u);
}

TEST(Model, FiniteForHundredSeeds) {
  Toy toy = make_toy(6, 8, 4, 2, 9);
  toy.config.d = 4;
  toy.config.d_e = 6;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    AirDde m(toy.config, toy.data.stations, toy.norm, seed);
    const Tensor f = m.forecast(toy.windows.at(seed % toy.windows.size()));
    EXPECT_TRUE(f.all_finite()) << seed;
  }
}

TEST(Model, Deterministic) {
  Toy toy = make_toy(4, 6, 3, 2);
  AirDde a(toy.config, toy.data.stations, toy.norm, 3);
  AirDde b(toy.config, toy.data.stations, toy.norm, 3);
  const auto& s = toy.windows.at(5);
  EXPECT_EQ(a.forecast(s), b.forecast(s));
  EXPECT_EQ(a.forecast(s), a.forecast(s));
  AirDde c(toy.config, toy.data.stations, toy.norm, 4);
  EXPECT_NE(a.forecast(s), c.forecast(s));
}

TEST(Model, FutureCovariatesChangeTheSolve) {
  Toy toy = make_toy(4, 6, 3, 2);
  AirDde held(toy.config, toy.data.stations, toy.norm, 3);
  toy.config.future_covariates = true;
  AirDde fut(toy.config, toy.data.stations, toy.norm, 3);
  const auto& s = toy.windows.at(5);
  data::WindowSample shifted = s;
  for (auto& v : shifted.future_features.values()) v += 2.0;
  EXPECT_EQ(held.forecast(s), held.forecast(shifted));
  EXPECT_NE(fut.forecast(s), fut.forecast(shifted));
  // the first horizon interval reads step T - 1 either way
  EXPECT_EQ(held.forecast(s)(0, 0), fut.forecast(s)(0, 0));
}

TEST(Model, AblationDropsAdvection) {
  Toy toy = make_toy(4, 6, 3, 2);
  AirDde full(toy.config, toy.data.stations, toy.norm, 3);
  toy.config.use_advection = false;
  AirDde abl(toy.config, toy.data.stations, toy.norm, 3);
  const auto& s = toy.windows.at(5);
  EXPECT_NE(full.forecast(s), abl.forecast(s));
  // zeroing the advection weights matches the ablation exactly
  zero_khop(full.params(), full.evolution().advection);
  EXPECT_EQ(full.forecast(s), abl.forecast(s));
}

TEST(Model, CheckpointRoundTrip) {
  Toy toy = make_toy(4, 6, 3, 2);
  AirDde m(toy.config, toy.data.stations, toy.norm, 31);
  const auto path = std::filesystem::temp_directory_path() / "airdde_test_model.ckpt";
  save_checkpoint(m.to_checkpoint(), path);
  const AirDde back = AirDde::from_checkpoint(load_checkpoint(path), toy.data.stations);
  EXPECT_EQ(back.params().names(), m.params().names());
  EXPECT_EQ(back.params().tensors(), m.params().tensors());
  EXPECT_EQ(back.norm().mean, m.norm().mean);
  EXPECT_EQ(back.norm().stddev, m.norm().stddev);
  const auto& s = toy.windows.at(3);
  EXPECT_EQ(back.forecast(s), m.forecast(s));
}

TEST(Model, CheckpointSchemaMismatch) {
  Toy toy = make_toy(4, 6, 3, 2);
  AirDde m(toy.config, toy.data.stations, toy.norm, 31);
  const Checkpoint ck = m.to_checkpoint();
  toy.config.m = 5;
  AirDde other(toy.config, toy.data.stations, toy.norm, 31);
  try {
    other.load_params(ck);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("m="), std::string::npos) << e.what();
  }
  geo::StationSet moved = toy.data.stations;
  moved.ids[0] = "elsewhere";
  EXPECT_THROW(AirDde::from_checkpoint(ck, moved), std::runtime_error);
}

TEST(Model, EndToEndGradientCheck) {
  Toy toy = make_toy(4, 6, 3, 2);
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    AirDde m(toy.config, toy.data.stations, toy.norm, 40 + seed);
    const auto& s = toy.windows.at(8);
    auto loss = [&](const Bound& p) { return m.loss(p, s); };
    std::map<std::string, double> worst;
    for (const auto& g : check_parameter_gradients(loss, m.params())) {
      worst[g.group] = std::max(worst[g.group], g.max_rel_error);
    }
    EXPECT_EQ(worst.size(), 5u);  // embed, encoder, maa, evolution, decoder
    for (const auto& [group, err] : worst) EXPECT_LT(err, 1e-4) << group;
  }
}
