#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "airdde/oracle.hpp"

using namespace airdde;
using namespace airdde::oracle;

namespace {

// 4 x 3 grid about 50 km apart, the spacing where the Gaussian kernel keeps edges.
OracleConfig calm(std::size_t length) {
  const std::size_t n = 12;
  OracleConfig c;
  c.stations = grid_stations(4, 3, 50.0);
  c.length = length;
  c.sink_rate = 0.0;
  c.background = 0.0;
  c.wind = {WindSegment{0.0, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}};
  return c;
}

// Three stations west -> east, wind toward the east covering each gap in
// `delay_h`. Fast transfer keeps the residence time at a station well under a step.
OracleConfig pulse_pair(double distance_km, double delay_h, std::size_t length) {
  OracleConfig c;
  c.stations = grid_stations(1, 3, distance_km);
  c.length = length;
  c.advection_radius_km = distance_km + 10.0;
  c.advection_rate = 20.0;
  c.sink_rate = 0.02;
  c.background = 0.0;
  const double d = geo::haversine_km(c.stations.latitudes[0], c.stations.longitudes[0], c.stations.latitudes[1],
                                     c.stations.longitudes[1]);
  const double bearing = geo::initial_bearing_deg(c.stations.latitudes[0], c.stations.longitudes[0],
                                                  c.stations.latitudes[1], c.stations.longitudes[1]);
  const double speed = d / delay_h;
  c.wind = {WindSegment{0.0, {speed, speed, speed}, {bearing, bearing, bearing}}};
  c.sources = {SourceEvent{0, 10.0, 1.0, 50.0}};
  return c;
}

std::vector<double> row(const Tensor& t, std::size_t i) {
  std::vector<double> out(t.cols());
  for (std::size_t k = 0; k < t.cols(); ++k) out[k] = t(i, k);
  return out;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST(Oracle, UniformCalmFieldStaysConstant) {
  OracleConfig c = calm(200);
  c.initial.assign(12, 3.25);
  const auto d = simulate_transport(c);
  ASSERT_EQ(d.target.shape(), (Shape{12, 200}));
  for (double v : d.target.values()) EXPECT_NEAR(v, 3.25, 1e-12);
}

TEST(Oracle, DiffusionConservesMass) {
  OracleConfig c = calm(50);  // 50 * 20 = 1000 fine steps
  c.initial = {10.0, 0.0, 4.0, 0.0, 1.0, 7.5, 0.0, 0.0, 2.0, 0.0, 0.0, 3.0};
  const auto g = geo::build_diffusion_graph(c.stations, c.kappa);
  double degree = 0.0;
  for (std::size_t j = 0; j < 12; ++j) degree += g(1, j);
  ASSERT_GT(degree, 0.0);
  MassTrace trace;
  const auto d = simulate_transport(c, &trace);
  ASSERT_EQ(c.length * c.fine_substeps, 1000u);
  const double m0 = std::accumulate(c.initial.begin(), c.initial.end(), 0.0);
  for (std::size_t k = 0; k < trace.station_mass.size(); ++k)
    EXPECT_NEAR(trace.station_mass[k] + trace.transit_mass[k], m0, 1e-8 * m0);
  // diffusion actually moved mass around
  EXPECT_GT(d.target(1, 49), 0.1);
}

TEST(Oracle, NonNegative) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto d = simulate_transport(acceptance_config(seed, 12, 400));
    for (double v : d.target.values()) EXPECT_GE(v, 0.0);
  }
}

TEST(Oracle, Errors) {
  OracleConfig c = calm(10);
  c.sources = {SourceEvent{0, 0.0, 1.0, -1.0}};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(simulate_transport(c), std::invalid_argument);
  c = calm(10);
  c.fine_substeps = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = calm(10);
  c.diffusion = 50.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Oracle, Deterministic) {
  const auto a = simulate_transport(default_acceptance_config(4));
  const auto b = simulate_transport(default_acceptance_config(4));
  EXPECT_EQ(a.target, b.target);
  EXPECT_EQ(a.covariates, b.covariates);
  EXPECT_EQ(a.num_stations(), 12u);
  EXPECT_EQ(a.length(), 3000u);
}

TEST(Oracle, PeakLagMatchesConstructedDelay) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dist(25.0, 60.0);
  for (int k = 0; k < 5; ++k) {
    const auto d = simulate_transport(pulse_pair(dist(rng), 3.0, 60));
    const auto up = row(d.target, 0), down = row(d.target, 1);
    const long lag = static_cast<long>(argmax(down)) - static_cast<long>(argmax(up));
    EXPECT_NEAR(static_cast<double>(lag), 3.0, 1.0) << k;
  }
}

TEST(Oracle, UpstreamDownstreamCrossCorrelation) {
  OracleConfig c = pulse_pair(40.0, 3.0, 400);
  c.sources.clear();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int h = 0; h < 390; h += 1)
    if (u(rng) < 0.15) c.sources.push_back(SourceEvent{0, static_cast<double>(h), 1.0, 20.0 + 40.0 * u(rng)});
  const auto d = simulate_transport(c);
  const auto lag = cross_correlation_lag(row(d.target, 0), row(d.target, 1), 8);
  EXPECT_NEAR(static_cast<double>(lag), 3.0, 1.0);
}

TEST(CrossCorrelation, Examples) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  std::vector<double> a(100);
  for (auto& v : a) v = n01(rng);
  EXPECT_EQ(cross_correlation_lag(a, a, 10), 0u);
  std::vector<double> b(100);
  for (std::size_t t = 0; t < 100; ++t) b[t] = t >= 2 ? a[t - 2] : 0.0;
  EXPECT_EQ(cross_correlation_lag(a, b, 10), 2u);
  EXPECT_THROW(cross_correlation_lag(std::vector<double>(100, 1.0), a, 10), std::invalid_argument);
  EXPECT_THROW(cross_correlation_lag(a, b, 50), std::invalid_argument);
}

namespace {

data::WindowSample sample_from(const Tensor& series, std::size_t t_in, std::size_t h) {
  data::WindowSample s;
  const std::size_t n = series.rows();
  s.inputs = Tensor({n, t_in});
  s.targets = Tensor({n, h});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < t_in; ++t) s.inputs(i, t) = series(i, t);
    for (std::size_t k = 0; k < h; ++k) s.targets(i, k) = series(i, t_in + k);
  }
  return s;
}

}  // namespace

TEST(Persistence, ConstantAndRamp) {
  Tensor flat({3, 20});
  flat.fill(4.0);
  const auto s = sample_from(flat, 8, 12);
  const Tensor p = persistence_forecast(s);
  EXPECT_EQ(p.shape(), (Shape{3, 12}));
  EXPECT_EQ(p, s.targets);

  for (double slope : {0.5, -2.0, 3.0})
    for (std::size_t h : {1u, 4u, 12u}) {
      Tensor ramp({2, 8 + h});
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t t = 0; t < 8 + h; ++t) ramp(i, t) = 1.0 + slope * static_cast<double>(t) + static_cast<double>(i);
      const auto r = sample_from(ramp, 8, h);
      const Tensor q = persistence_forecast(r);
      double mae = 0.0;
      for (std::size_t k = 0; k < q.numel(); ++k) mae += std::abs(q[k] - r.targets[k]);
      mae /= static_cast<double>(q.numel());
      EXPECT_NEAR(mae, std::abs(slope) * static_cast<double>(h + 1) / 2.0, 1e-12);
    }
}
