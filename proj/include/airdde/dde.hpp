#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "airdde/autodiff.hpp"
#include "airdde/blocks.hpp"
#include "airdde/params.hpp"

namespace airdde::dde {

using ad::Var;

/// Raised when a delayed lookup falls outside the stored history.
class HistoryError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Raised when the integrated state stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double time) : std::runtime_error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

/// Append-only record of solved states. Lookups between two knots that both
/// carry derivatives use cubic Hermite interpolation; otherwise linear.
class HistoryBuffer {
 public:
  struct Knot {
    double time;
    Var state;
    std::optional<Var> derivative;
  };

  void append(double time, Var state, std::optional<Var> derivative = std::nullopt);
  Var query(double time) const;

  bool empty() const { return knots_.empty(); }
  double t_min() const;
  double t_max() const;
  const std::vector<Knot>& knots() const { return knots_; }

 private:
  std::vector<Knot> knots_;
};

/// dh/dt = f(t, h, history)
using Rhs = std::function<Var(double, Var, const HistoryBuffer&)>;
/// dh/dt = f(t, h)
using OdeRhs = std::function<Var(double, Var)>;

/// One classical RK4 step; delayed terms inside `f` read `history`.
Var rk4_step(const Rhs& f, double t, Var h, double dt, const HistoryBuffer& history);

struct SolveOptions {
  double t0 = 0.0;          // time of the initial state
  double step = 1.0;        // output grid spacing
  std::size_t horizon = 1;  // number of output grid points after t0
  std::size_t substeps = 4; // integration steps per output interval
  double tau = 1.0;         // largest delay f will request
};

/// Method of steps with RK4. `past` holds states on the grid
/// t0 - past.size()*step, ..., t0 - step; `initial` is the state at t0.
/// Each accepted step is appended to the history (with its derivative) so
/// later delayed lookups see solved values. Returns the states at
/// t0 + step, ..., t0 + horizon*step.
std::vector<Var> solve_dde(const Rhs& f, Var initial, std::span<const Var> past, const SolveOptions& options,
                           HistoryBuffer* trace = nullptr);

/// Plain RK4 on the same step grid as solve_dde, for delay-free right-hand sides.
std::vector<Var> solve_ode(const OdeRhs& f, Var initial, const SolveOptions& options);

/// Diffusion, delayed advection and source/sink terms of the latent dynamics:
///   dh/dt = D * G_diff(A_diff, h(t)) + G_adv(A_adv(t), h(t - tau)) + f([h(t), M(t)])
struct EvolutionFunction {
  double diffusion_coef = 0.1;
  double tau = 1.0;
  bool use_advection = true;
  nn::GnnKhop diffusion;
  nn::GnnKhop advection;
  nn::Mlp source;

  static EvolutionFunction create(ParamStore& store, const std::string& name, std::size_t hidden_dim,
                                  std::size_t covariate_dim, std::size_t hops, double diffusion_coef, double tau,
                                  Rng& rng);

  Var operator()(const Bound& p, double t, Var h, const HistoryBuffer& history, Var diffusion_graph,
                 Var advection_graph, Var covariates) const;
};

}  // namespace airdde::dde
