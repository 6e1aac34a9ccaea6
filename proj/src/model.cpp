#include "airdde/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "airdde/csv.hpp"

namespace airdde::model {

namespace {

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size() || text.front() == '-') {
    throw std::invalid_argument("config " + key + ": expected a non-negative integer, got '" + text + "'");
  }
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& key, const std::string& text) {
  return csv::to_double(text, "config " + key);
}

bool parse_flag(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw std::invalid_argument("config " + key + ": expected true/false, got '" + text + "'");
}

std::string join_ids(const geo::StationSet& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + s.ids[i];
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (N < 2) throw std::invalid_argument("model needs at least two stations (N >= 2)");
  if (tau < 1) throw std::invalid_argument("tau must be at least 1");
  if (T < tau) throw std::invalid_argument("input length T must be at least tau");
  if (H < 1) throw std::invalid_argument("horizon H must be at least 1");
  if (d < 1 || d_e < 1 || K < 1 || m < 1 || substeps < 1 || feature_dim < 1) {
    throw std::invalid_argument("model dimensions, hops, memory units and substeps must be positive");
  }
  if (!(delta > 0.0)) throw std::invalid_argument("Huber delta must be positive");
  if (!(D >= 0.0) || !std::isfinite(D)) throw std::invalid_argument("diffusion coefficient must be non-negative");
  if (!(kappa > 0.0 && kappa <= 1.0)) throw std::invalid_argument("kappa must lie in (0, 1]");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_pairs() const {
  return {
      {"N", std::to_string(N)},
      {"T", std::to_string(T)},
      {"H", std::to_string(H)},
      {"d", std::to_string(d)},
      {"d_e", std::to_string(d_e)},
      {"K", std::to_string(K)},
      {"m", std::to_string(m)},
      {"tau", std::to_string(tau)},
      {"D", csv::format_double(D)},
      {"delta", csv::format_double(delta)},
      {"substeps", std::to_string(substeps)},
      {"kappa", csv::format_double(kappa)},
      {"feature_dim", std::to_string(feature_dim)},
      {"use_advection", use_advection ? "true" : "false"},
      {"future_covariates", future_covariates ? "true" : "false"},
  };
}

ModelConfig ModelConfig::from_meta(const std::map<std::string, std::string>& meta, const std::string& prefix) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(prefix + key);
    if (it == meta.end()) throw std::runtime_error("checkpoint is missing config entry '" + prefix + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.N = parse_size("N", get("N"));
  c.T = parse_size("T", get("T"));
  c.H = parse_size("H", get("H"));
  c.d = parse_size("d", get("d"));
  c.d_e = parse_size("d_e", get("d_e"));
  c.K = parse_size("K", get("K"));
  c.m = parse_size("m", get("m"));
  c.tau = parse_size("tau", get("tau"));
  c.D = parse_real("D", get("D"));
  c.delta = parse_real("delta", get("delta"));
  c.substeps = parse_size("substeps", get("substeps"));
  c.kappa = parse_real("kappa", get("kappa"));
  c.feature_dim = parse_size("feature_dim", get("feature_dim"));
  c.use_advection = parse_flag("use_advection", get("use_advection"));
  c.future_covariates = parse_flag("future_covariates", get("future_covariates"));
  c.validate();
  return c;
}

double huber_value(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * a * a : delta * a - 0.5 * delta * delta;
}

Var huber_loss(Var pred, Var target, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("huber_loss: delta must be positive");
  if (pred.shape() != target.shape()) {
    throw ShapeError("huber_loss: shape mismatch " + shape_to_string(pred.shape()) + " vs " +
                     shape_to_string(target.shape()));
  }
  // 0.5 min(|r|, d)^2 + d (|r| - min(|r|, d))
  Var a = ad::abs(ad::sub(pred, target));
  Var c = ad::clamp_max(a, delta);
  return ad::mean(ad::lincomb({ad::square(c), a, c}, {0.5, delta, -delta}));
}

AirDde::AirDde(ModelConfig config, geo::StationSet stations, data::NormStats stats, std::uint64_t seed)
    : config_(config), stations_(std::move(stations)), norm_(std::move(stats)) {
  config_.validate();
  stations_.validate();
  if (stations_.size() != config_.N) {
    throw std::invalid_argument("model configured for " + std::to_string(config_.N) + " stations, got " +
                                std::to_string(stations_.size()));
  }
  if (norm_.mean.size() != 1 + config_.feature_dim || norm_.stddev.size() != norm_.mean.size()) {
    throw std::invalid_argument("normalization statistics need " + std::to_string(1 + config_.feature_dim) +
                                " channels");
  }
  diffusion_graph_ = geo::row_normalized(geo::build_diffusion_graph(stations_, config_.kappa).weights);

  Rng rng(seed);
  const auto& c = config_;
  e1_ = params_.add_uniform("embed.e1", {c.N, c.d}, c.d, rng);
  e2_ = params_.add_uniform("embed.e2", {c.N, c.d}, c.d, rng);
  encoder_ = nn::GnnGruCell::create(params_, "encoder", 1 + c.feature_dim, c.d_e, c.K, rng);
  maa_ = nn::MemoryAugmentedAttention::create(params_, "maa", c.d_e, c.m, rng);
  evolution_ = dde::EvolutionFunction::create(params_, "evolution", c.d_e, c.feature_dim, c.K, c.D,
                                              static_cast<double>(c.tau), rng);
  evolution_.use_advection = c.use_advection;
  decoder_ = nn::GnnGruCell::create(params_, "decoder.gru", c.d_e, c.d_e, c.K, rng);
  output_ = nn::Mlp::create(params_, "decoder.output", {c.d_e, c.d_e, 1}, rng);
}

Tensor AirDde::normalized_inputs(const data::WindowSample& s) const {
  const std::size_t n = config_.N, t = config_.T, f = config_.feature_dim;
  if (s.inputs.shape() != Shape{n, t} || s.features.shape() != Shape{n, t, f}) {
    throw ShapeError("window inputs " + shape_to_string(s.inputs.shape()) + " / features " +
                     shape_to_string(s.features.shape()) + " do not match the model (N=" + std::to_string(n) +
                     ", T=" + std::to_string(t) + ", F=" + std::to_string(f) + ")");
  }
  Tensor out({n, t, 1 + f});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < t; ++k) {
      out.at3(i, k, 0) = norm_.normalize(0, s.inputs(i, k));
      for (std::size_t c = 0; c < f; ++c) out.at3(i, k, 1 + c) = norm_.normalize(1 + c, s.features.at3(i, k, c));
    }
  }
  return out;
}

Tensor AirDde::normalized_features(const data::WindowSample& s, std::size_t step) const {
  const std::size_t n = config_.N, t = config_.T, f = config_.feature_dim;
  const Tensor& src = step < t ? s.features : s.future_features;
  const std::size_t k = step < t ? step : step - t;
  if (src.rank() != 3 || src.dim(0) != n || src.dim(2) != f || k >= src.dim(1)) {
    throw ShapeError("window covariates do not cover step " + std::to_string(step));
  }
  Tensor out({n, f});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < f; ++c) out(i, c) = norm_.normalize(1 + c, src.at3(i, k, c));
  return out;
}

Tensor AirDde::advection_matrix(const data::WindowSample& s, std::size_t step) const {
  return geo::row_normalized(s.graph(step).weights);
}

std::vector<Var> AirDde::encode(const Bound& p, Var adjacency, const Tensor& inputs) const {
  const std::size_t n = config_.N, t = config_.T, w = 1 + config_.feature_dim;
  if (inputs.shape() != Shape{n, t, w}) {
    throw ShapeError("encode: inputs " + shape_to_string(inputs.shape()) + ", expected " +
                     shape_to_string(Shape{n, t, w}));
  }
  ad::Tape& tape = p.tape();
  std::vector<Var> states;
  states.reserve(t + 1);
  states.push_back(tape.constant(Tensor({n, config_.d_e})));
  for (std::size_t k = 0; k < t; ++k) {
    Tensor x({n, w});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < w; ++c) x(i, c) = inputs.at3(i, k, c);
    states.push_back(encoder_.step(p, tape.constant(std::move(x)), states.back(), adjacency));
  }
  return states;
}

std::vector<Var> AirDde::init_states(const Bound& p, std::span<const Var> enc, const data::WindowSample& s) const {
  const std::size_t t = config_.T, tau = config_.tau;
  if (t < tau) throw std::invalid_argument("init_states: T must be at least tau");
  if (enc.size() != t + 1) throw std::invalid_argument("init_states: expected T + 1 encoder states");
  std::vector<Var> out;
  out.reserve(tau + 1);
  for (std::size_t g = t - tau; g <= t; ++g) {
    const std::size_t first = g + 1 >= tau ? g + 1 - tau : 0;
    std::span<const Var> window = enc.subspan(first, g - first + 1);
    const geo::Graph& adv = s.graph(g >= 1 ? g - 1 : 0);
    Var h_g = maa_.global_features(p, enc[g]);
    Var h_l = maa_.local_features(p, window, adv);
    out.push_back(maa_.fuse(p, enc[g], h_g, h_l));
  }
  return out;
}

Var AirDde::forward(const Bound& p, const data::WindowSample& s, ForwardTrace* trace) const {
  const auto& c = config_;
  if (s.horizon() != c.H) {
    throw ShapeError("window horizon " + std::to_string(s.horizon()) + " does not match model H=" + std::to_string(c.H));
  }
  ad::Tape& tape = p.tape();
  Var adjacency = geo::adaptive_adjacency(p[e1_], p[e2_]);
  std::vector<Var> enc = encode(p, adjacency, normalized_inputs(s));
  std::vector<Var> init = init_states(p, enc, s);

  // Covariates and advection graphs on the horizon: held at the last input
  // step, or read per step when future covariates are enabled.
  Var diffusion = tape.constant(diffusion_graph_);
  const std::size_t held = c.T - 1;
  const std::size_t steps = c.future_covariates ? c.H : 1;
  std::vector<Var> adv, cov;
  for (std::size_t k = 0; k < steps; ++k) {
    adv.push_back(tape.constant(advection_matrix(s, held + k)));
    cov.push_back(tape.constant(normalized_features(s, held + k)));
  }
  const double t0 = static_cast<double>(c.T);
  auto slot = [&](double t) -> std::size_t {
    if (steps == 1) return 0;
    const double k = std::floor(t - t0 + 1e-9);
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(steps - 1)));
  };
  const Bound* params = &p;
  dde::Rhs rhs = [&, params](double t, Var h, const dde::HistoryBuffer& history) {
    const std::size_t k = slot(t);
    return evolution_(*params, t, h, history, diffusion, adv[k], cov[k]);
  };
  dde::SolveOptions opts;
  opts.t0 = t0;
  opts.step = 1.0;
  opts.horizon = c.H;
  opts.substeps = c.substeps;
  opts.tau = static_cast<double>(c.tau);
  dde::HistoryBuffer local;
  dde::HistoryBuffer& history = trace ? trace->history : local;
  std::span<const Var> past(init.data(), c.tau);
  std::vector<Var> solved;
  try {
    solved = dde::solve_dde(rhs, init.back(), past, opts, &history);
  } catch (const dde::DivergenceError& e) {
    std::ostringstream msg;
    msg << "forecast for window starting at step " << s.start << " diverged: " << e.what();
    throw dde::DivergenceError(msg.str(), e.time());
  }

  std::vector<Var> dec, outs;
  Var state = init.back();
  for (const Var& h : solved) {
    state = decoder_.step(p, h, state, adjacency);
    dec.push_back(state);
    outs.push_back(output_(p, state));
  }
  Var pred = outs.size() == 1 ? outs.front() : ad::concat_cols(outs);
  if (trace) {
    trace->adjacency = adjacency;
    trace->encoder = std::move(enc);
    trace->initial = std::move(init);
    trace->solved = std::move(solved);
    trace->decoder = std::move(dec);
  }
  return pred;
}

Var AirDde::loss(const Bound& p, const data::WindowSample& s) const {
  Var pred = forward(p, s);
  Tensor target(s.targets.shape());
  for (std::size_t i = 0; i < target.numel(); ++i) target[i] = norm_.normalize(0, s.targets[i]);
  return huber_loss(pred, p.tape().constant(std::move(target)), config_.delta);
}

Tensor AirDde::forecast(const data::WindowSample& s) const {
  ad::Tape tape;
  Bound p(tape, params_, false);
  Tensor out = forward(p, s).value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = norm_.denormalize(0, out[i]);
  return out;
}

Checkpoint AirDde::to_checkpoint() const {
  Checkpoint ck;
  ck.put_params(params_, "param.");
  ck.tensors["norm.mean"] = Tensor({norm_.mean.size()}, norm_.mean);
  ck.tensors["norm.std"] = Tensor({norm_.stddev.size()}, norm_.stddev);
  for (const auto& [k, v] : config_.to_pairs()) ck.meta["model." + k] = v;
  ck.meta["stations"] = join_ids(stations_);
  return ck;
}

AirDde AirDde::from_checkpoint(const Checkpoint& ck, const geo::StationSet& stations) {
  const ModelConfig config = ModelConfig::from_meta(ck.meta, "model.");
  auto mean = ck.tensors.find("norm.mean");
  auto sd = ck.tensors.find("norm.std");
  if (mean == ck.tensors.end() || sd == ck.tensors.end()) {
    throw std::runtime_error("checkpoint has no normalization statistics");
  }
  data::NormStats norm;
  norm.mean = mean->second.raw();
  norm.stddev = sd->second.raw();
  AirDde model(config, stations, norm, 0);
  model.load_params(ck);
  return model;
}

void AirDde::load_params(const Checkpoint& ck) {
  for (const auto& [k, v] : config_.to_pairs()) {
    auto it = ck.meta.find("model." + k);
    if (it == ck.meta.end()) throw std::runtime_error("checkpoint is missing config entry 'model." + k + "'");
    if (it->second != v) {
      throw std::runtime_error("schema mismatch: checkpoint has " + k + "=" + it->second + " but the config has " + k +
                               "=" + v);
    }
  }
  auto ids = ck.meta.find("stations");
  if (ids != ck.meta.end() && ids->second != join_ids(stations_)) {
    throw std::runtime_error("schema mismatch: checkpoint was trained on stations [" + ids->second +
                             "], dataset has [" + join_ids(stations_) + "]");
  }
  ck.get_params(params_, "param.");
}

}  // namespace airdde::model
