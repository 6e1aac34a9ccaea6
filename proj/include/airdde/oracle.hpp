#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "airdde/data.hpp"
#include "airdde/geo.hpp"
#include "airdde/tensor.hpp"

namespace airdde::oracle {

/// Wind in effect from `start_hour` until the next segment begins.
struct WindSegment {
  double start_hour = 0.0;
  std::vector<double> speed_kmh;      // per station
  std::vector<double> direction_deg;  // per station, blowing toward
};

/// Constant emission rate (mass per hour) at one station over [start, start + duration).
struct SourceEvent {
  std::size_t station = 0;
  double start_hour = 0.0;
  double duration_hours = 1.0;
  double magnitude = 0.0;
};

/// Graph advection-diffusion ground truth:
///   du_i/dt = D * sum_j w_ij (u_j - u_i)               (Gaussian-kernel diffusion graph)
///           - sink * u_i + background + S_i(t)
///           - sum_{edges i->k} q_ik u_i                 (advective outflow)
///           + sum_{edges j->i} q_ji u_j(t - delay_ji)   (delayed arrival)
/// with q_ji = advection_rate * v_j cos(theta) / d_ji and delay_ji =
/// d_ji / (v_j cos(theta)) for stations within advection_radius_km.
/// Mass in transit is held in per-edge queues, so it is released exactly
/// delay_ji later. A station with no downwind edge loses
/// advection_rate * v / boundary_length_km of its mass out of the domain
/// (0 disables the open boundary).
struct OracleConfig {
  geo::StationSet stations;
  std::size_t length = 3000;
  double granularity_hours = 1.0;
  std::size_t fine_substeps = 20;
  double diffusion = 0.02;
  double kappa = 0.1;
  double sink_rate = 0.02;
  double background = 0.5;
  double advection_rate = 0.5;
  double advection_radius_km = 75.0;
  double boundary_length_km = 50.0;
  std::vector<double> initial;  // per station; empty means background / sink
  std::vector<WindSegment> wind;
  std::vector<SourceEvent> sources;
  std::string start_time = "2024-01-01 00:00:00";
  std::uint64_t seed = 0;

  /// Throws on malformed fields, negative sources or a step too large for
  /// the explicit scheme.
  void validate() const;
  double fine_dt_hours() const { return granularity_hours / static_cast<double>(fine_substeps); }
};

/// Stations on a rows x cols grid, `spacing_km` apart, starting at (lat0, lon0)
/// and growing north-to-south by row and west-to-east by column.
geo::StationSet grid_stations(std::size_t rows, std::size_t cols, double spacing_km, double lat0 = 35.0,
                              double lon0 = 115.0);

/// 12 stations on a 4 x 3 grid about 50 km apart, 3000 hourly steps, winds
/// alternating between an eastward and a westward regime in 24-72 h blocks,
/// daily emission pulses at three stations, sink 0.02 / h.
OracleConfig default_acceptance_config(std::uint64_t seed);

/// Same layout with `n` stations (n >= 2) and `length` steps.
OracleConfig acceptance_config(std::uint64_t seed, std::size_t n, std::size_t length);

/// Fine-step explicit integration, sampled every `fine_substeps` steps.
/// Factors are wind_speed and wind_direction in effect at each sample.
data::Dataset simulate_transport(const OracleConfig& config);

/// Fine-step totals of the stationary and in-transit mass, for conservation checks.
struct MassTrace {
  std::vector<double> station_mass;  // per coarse step
  std::vector<double> transit_mass;  // per coarse step
};
data::Dataset simulate_transport(const OracleConfig& config, MassTrace* trace);

/// Repeats the last observed value over the horizon. Returns N x H.
Tensor persistence_forecast(const data::WindowSample& sample);

/// Lag in [0, max_lag] that maximizes the Pearson correlation of
/// b[lag..] against a[..L-lag].
std::size_t cross_correlation_lag(std::span<const double> a, std::span<const double> b, std::size_t max_lag);

}  // namespace airdde::oracle
