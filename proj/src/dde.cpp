#include "airdde/dde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace airdde::dde {

namespace {

double knot_tolerance(double t) { return 1e-9 * std::max(1.0, std::abs(t)); }

std::string describe_span(double t, double lo, double hi) {
  std::ostringstream msg;
  msg << "history query at t=" << t << " outside stored span [" << lo << ", " << hi << "]";
  return msg.str();
}

}  // namespace

void HistoryBuffer::append(double time, Var state, std::optional<Var> derivative) {
  if (!knots_.empty() && !(time > knots_.back().time)) {
    throw std::invalid_argument("history knots must have strictly increasing times");
  }
  knots_.push_back(Knot{time, state, derivative});
}

double HistoryBuffer::t_min() const {
  if (knots_.empty()) throw HistoryError("empty history");
  return knots_.front().time;
}

double HistoryBuffer::t_max() const {
  if (knots_.empty()) throw HistoryError("empty history");
  return knots_.back().time;
}

Var HistoryBuffer::query(double t) const {
  if (knots_.empty()) throw HistoryError("history query on an empty buffer");
  const double tol = knot_tolerance(t);
  if (t < knots_.front().time - tol || t > knots_.back().time + tol) {
    throw HistoryError(describe_span(t, knots_.front().time, knots_.back().time));
  }
  auto upper = std::upper_bound(knots_.begin(), knots_.end(), t,
                                [](double value, const Knot& k) { return value < k.time; });
  // Snap to a knot when within rounding distance.
  if (upper != knots_.end() && std::abs(upper->time - t) <= tol) return upper->state;
  if (upper == knots_.begin()) return knots_.front().state;
  const Knot& left = *(upper - 1);
  if (std::abs(left.time - t) <= tol || upper == knots_.end()) return left.state;
  const Knot& right = *upper;

  const double width = right.time - left.time;
  const double s = (t - left.time) / width;
  if (left.derivative && right.derivative) {
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    const double h10 = s3 - 2.0 * s2 + s;
    const double h01 = -2.0 * s3 + 3.0 * s2;
    const double h11 = s3 - s2;
    return ad::lincomb({left.state, *left.derivative, right.state, *right.derivative},
                       {h00, h10 * width, h01, h11 * width});
  }
  return ad::lincomb({left.state, right.state}, {1.0 - s, s});
}

namespace {

// The RK4 update shared by the delay and delay-free integrators, given k1.
template <typename Eval>
Var rk4_from_slope(const Eval& eval, double t, Var h, double dt, Var k1) {
  const double half = 0.5 * dt;
  Var k2 = eval(t + half, ad::lincomb({h, k1}, {1.0, half}));
  Var k3 = eval(t + half, ad::lincomb({h, k2}, {1.0, half}));
  Var k4 = eval(t + dt, ad::lincomb({h, k3}, {1.0, dt}));
  return ad::lincomb({h, k1, k2, k3, k4}, {1.0, dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0});
}

void validate(const SolveOptions& o) {
  if (o.horizon < 1) throw std::invalid_argument("solver horizon must be at least 1");
  if (o.substeps < 1) throw std::invalid_argument("solver substeps must be at least 1");
  if (!(o.step > 0.0)) throw std::invalid_argument("solver step must be positive");
  if (!(o.tau >= 0.0)) throw std::invalid_argument("delay must be non-negative");
}

void check_finite(Var h, double t) {
  if (!h.value().all_finite()) {
    std::ostringstream msg;
    msg << "solver state became non-finite at t=" << t;
    throw DivergenceError(msg.str(), t);
  }
}

}  // namespace

Var rk4_step(const Rhs& f, double t, Var h, double dt, const HistoryBuffer& history) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  auto eval = [&](double time, Var state) { return f(time, state, history); };
  return rk4_from_slope(eval, t, h, dt, eval(t, h));
}

std::vector<Var> solve_dde(const Rhs& f, Var initial, std::span<const Var> past, const SolveOptions& o,
                           HistoryBuffer* trace) {
  validate(o);
  const double dt = o.step / static_cast<double>(o.substeps);
  const double span = static_cast<double>(past.size()) * o.step;
  if (o.tau > span + knot_tolerance(o.t0)) {
    std::ostringstream msg;
    msg << "delay " << o.tau << " exceeds the provided history span " << span;
    throw HistoryError(msg.str());
  }
  if (o.tau > 0.0 && o.tau < dt - knot_tolerance(o.t0)) {
    throw std::invalid_argument("delay is shorter than the integration step; increase substeps");
  }

  HistoryBuffer local;
  HistoryBuffer& buffer = trace ? *trace : local;
  if (!buffer.empty()) throw std::invalid_argument("solve_dde: trace buffer must start empty");
  for (std::size_t m = 0; m < past.size(); ++m) {
    buffer.append(o.t0 - static_cast<double>(past.size() - m) * o.step, past[m]);
  }

  // Each knot's derivative is f evaluated at that knot and doubles as k1 of
  // the next step. It is computed against a probe copy holding the bare knot,
  // so the real buffer only ever grows by complete knots.
  auto eval = [&](double time, Var state) { return f(time, state, buffer); };

  std::vector<Var> outputs;
  outputs.reserve(o.horizon);
  Var h = initial;
  {
    HistoryBuffer probe = buffer;
    probe.append(o.t0, h);
    Var slope = f(o.t0, h, probe);
    buffer.append(o.t0, h, slope);
  }
  const std::size_t total = o.horizon * o.substeps;
  for (std::size_t k = 0; k < total; ++k) {
    const double t = o.t0 + static_cast<double>(k) * dt;
    const double t_next = o.t0 + static_cast<double>(k + 1) * dt;
    Var k1 = *buffer.knots().back().derivative;
    h = rk4_from_slope(eval, t, h, dt, k1);
    check_finite(h, t_next);
    if (k + 1 < total) {
      HistoryBuffer probe = buffer;
      probe.append(t_next, h);
      Var slope = f(t_next, h, probe);
      buffer.append(t_next, h, slope);
    } else {
      buffer.append(t_next, h);
    }
    if ((k + 1) % o.substeps == 0) outputs.push_back(h);
  }
  return outputs;
}

std::vector<Var> solve_ode(const OdeRhs& f, Var initial, const SolveOptions& o) {
  validate(o);
  const double dt = o.step / static_cast<double>(o.substeps);
  std::vector<Var> outputs;
  outputs.reserve(o.horizon);
  Var h = initial;
  const std::size_t total = o.horizon * o.substeps;
  for (std::size_t k = 0; k < total; ++k) {
    const double t = o.t0 + static_cast<double>(k) * dt;
    Var k1 = f(t, h);
    h = rk4_from_slope(f, t, h, dt, k1);
    check_finite(h, o.t0 + static_cast<double>(k + 1) * dt);
    if ((k + 1) % o.substeps == 0) outputs.push_back(h);
  }
  return outputs;
}

EvolutionFunction EvolutionFunction::create(ParamStore& store, const std::string& name, std::size_t hidden_dim,
                                            std::size_t covariate_dim, std::size_t hops, double diffusion_coef,
                                            double tau, Rng& rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("evolution delay tau must be positive");
  EvolutionFunction e;
  e.diffusion_coef = diffusion_coef;
  e.tau = tau;
  e.diffusion = nn::GnnKhop::create(store, name + ".diffusion", hidden_dim, hidden_dim, hops, rng);
  e.advection = nn::GnnKhop::create(store, name + ".advection", hidden_dim, hidden_dim, hops, rng);
  e.source = nn::Mlp::create(store, name + ".source", {hidden_dim + covariate_dim, hidden_dim, hidden_dim}, rng);
  return e;
}

Var EvolutionFunction::operator()(const Bound& p, double t, Var h, const HistoryBuffer& history,
                                  Var diffusion_graph, Var advection_graph, Var covariates) const {
  Var out = ad::scale(diffusion(p, diffusion_graph, h), diffusion_coef);
  if (use_advection) {
    if (history.empty() || t - tau < history.t_min() - knot_tolerance(t)) {
      std::ostringstream msg;
      msg << "history underflow: need t - tau = " << (t - tau) << " but history starts at "
          << (history.empty() ? t : history.t_min());
      throw HistoryError(msg.str());
    }
    out = ad::add(out, advection(p, advection_graph, history.query(t - tau)));
  }
  return ad::add(out, source(p, ad::concat_cols({h, covariates})));
}

}  // namespace airdde::dde
