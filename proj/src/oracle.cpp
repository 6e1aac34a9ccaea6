#include "airdde/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace airdde::oracle {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
// Along-bearing transport slower than this creates no edge.
constexpr double kMinTransportKmh = 1.0;

struct Edge {
  std::size_t from, to;
  double rate;        // per hour
  std::size_t delay;  // fine steps
};

struct SegmentEdges {
  std::vector<Edge> edges;
  std::vector<double> outflow;  // per station, per hour
};

SegmentEdges segment_edges(const OracleConfig& c, const geo::GeoCache& geo, const WindSegment& w) {
  const std::size_t n = c.stations.size();
  const double dt = c.fine_dt_hours();
  SegmentEdges out;
  out.outflow.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      const double d = geo.distance_km(i, j);
      if (d > c.advection_radius_km || d <= 0.0) continue;
      const double along = w.speed_kmh[j] * std::cos((w.direction_deg[j] - geo.bearing_deg(i, j)) * kDegToRad);
      if (along < kMinTransportKmh) continue;
      const double rate = c.advection_rate * along / d;
      const auto delay = static_cast<std::size_t>(std::max<long long>(1, std::llround(d / along / dt)));
      out.edges.push_back(Edge{j, i, rate, delay});
      out.outflow[j] += rate;
    }
  }
  // Stations with no downwind neighbour vent out of the domain.
  std::vector<bool> has_edge(n, false);
  for (const auto& e : out.edges) has_edge[e.from] = true;
  for (std::size_t j = 0; j < n; ++j) {
    if (!has_edge[j] && c.boundary_length_km > 0.0) {
      out.outflow[j] += c.advection_rate * w.speed_kmh[j] / c.boundary_length_km;
    }
  }
  return out;
}

}  // namespace

void OracleConfig::validate() const {
  stations.validate();
  const std::size_t n = stations.size();
  if (n < 2) throw std::invalid_argument("oracle needs at least two stations");
  if (length < 1) throw std::invalid_argument("oracle length must be positive");
  if (!(granularity_hours > 0.0)) throw std::invalid_argument("granularity must be positive");
  if (fine_substeps < 10) throw std::invalid_argument("fine_substeps must be at least 10");
  if (!(diffusion >= 0.0) || !(sink_rate >= 0.0) || !(background >= 0.0) || !(advection_rate >= 0.0) ||
      !(boundary_length_km >= 0.0)) {
    throw std::invalid_argument("oracle rates must be non-negative");
  }
  if (!initial.empty() && initial.size() != n) throw std::invalid_argument("initial field needs one value per station");
  for (double u : initial)
    if (!(u >= 0.0)) throw std::invalid_argument("initial concentrations must be non-negative");
  if (wind.empty() || wind.front().start_hour != 0.0) throw std::invalid_argument("wind schedule must start at hour 0");
  for (std::size_t s = 0; s < wind.size(); ++s) {
    const auto& w = wind[s];
    if (w.speed_kmh.size() != n || w.direction_deg.size() != n) {
      throw std::invalid_argument("wind segment " + std::to_string(s) + " needs one value per station");
    }
    if (s > 0 && !(w.start_hour > wind[s - 1].start_hour)) {
      throw std::invalid_argument("wind segments must have increasing start hours");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!(w.speed_kmh[i] >= 0.0)) throw std::invalid_argument("negative wind speed in segment " + std::to_string(s));
      if (!(w.direction_deg[i] >= 0.0 && w.direction_deg[i] < 360.0)) {
        throw std::invalid_argument("wind direction outside [0, 360) in segment " + std::to_string(s));
      }
    }
  }
  for (const auto& e : sources) {
    if (e.station >= n) throw std::invalid_argument("source station index out of range");
    if (!(e.magnitude >= 0.0)) throw std::invalid_argument("negative source magnitude");
    if (!(e.duration_hours > 0.0)) throw std::invalid_argument("source duration must be positive");
  }

  // Explicit Euler keeps u >= 0 and damps the Laplacian modes when every
  // station's total loss rate times dt stays at or below 1.
  const auto geo = geo::GeoCache::from(stations);
  const auto graph = geo::build_diffusion_graph(stations, kappa);
  const double dt = fine_dt_hours();
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) degree[i] += graph(i, j);
  for (std::size_t s = 0; s < wind.size(); ++s) {
    const auto edges = segment_edges(*this, geo, wind[s]);
    for (std::size_t i = 0; i < n; ++i) {
      const double loss = dt * (diffusion * degree[i] + sink_rate + edges.outflow[i]);
      if (loss > 1.0) {
        std::ostringstream msg;
        msg << "stability violation: dt * (D * degree + sink + outflow) = " << loss << " > 1 at station "
            << stations.ids[i] << " in wind segment " << s << "; increase fine_substeps";
        throw std::invalid_argument(msg.str());
      }
    }
  }
}

geo::StationSet grid_stations(std::size_t rows, std::size_t cols, double spacing_km, double lat0, double lon0) {
  geo::StationSet s;
  const double dlat = spacing_km / (geo::kEarthRadiusKm * kDegToRad);
  const double dlon = dlat / std::cos(lat0 * kDegToRad);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      s.ids.push_back("S" + std::to_string(r * cols + c));
      s.latitudes.push_back(lat0 - static_cast<double>(r) * dlat);
      s.longitudes.push_back(lon0 + static_cast<double>(c) * dlon);
    }
  }
  return s;
}

OracleConfig acceptance_config(std::uint64_t seed, std::size_t n, std::size_t length) {
  if (n < 2) throw std::invalid_argument("oracle needs at least two stations");
  OracleConfig c;
  const std::size_t cols = std::min<std::size_t>(4, n);
  const std::size_t rows = (n + cols - 1) / cols;
  c.stations = grid_stations(rows, cols, 50.0);
  c.stations.ids.resize(n);
  c.stations.latitudes.resize(n);
  c.stations.longitudes.resize(n);
  c.length = length;
  c.seed = seed;

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x6f726163u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> block(24, 72);

  const double total_hours = static_cast<double>(length) * c.granularity_hours;
  bool eastward = unit(rng) < 0.5;
  for (double t = 0.0; t < total_hours; t += block(rng)) {
    WindSegment w;
    w.start_hour = t;
    for (std::size_t i = 0; i < n; ++i) {
      const double base_speed = eastward ? 30.0 : 36.0;
      const double base_dir = eastward ? 90.0 : 270.0;
      w.speed_kmh.push_back(base_speed * (0.9 + 0.2 * unit(rng)));
      w.direction_deg.push_back(base_dir - 10.0 + 20.0 * unit(rng));
    }
    c.wind.push_back(std::move(w));
    eastward = !eastward;
  }

  struct Site {
    std::size_t station;
    double hour;
  };
  std::vector<Site> sites;
  for (Site s : {Site{1, 7.0}, Site{6, 9.0}, Site{9, 5.0}})
    if (s.station < n) sites.push_back(s);
  const auto days = static_cast<std::size_t>(std::ceil(total_hours / 24.0));
  for (std::size_t d = 0; d < days; ++d) {
    for (const auto& s : sites) {
      c.sources.push_back(SourceEvent{s.station, 24.0 * static_cast<double>(d) + s.hour, 2.0, 60.0 + 60.0 * unit(rng)});
    }
  }
  return c;
}

OracleConfig default_acceptance_config(std::uint64_t seed) { return acceptance_config(seed, 12, 3000); }

data::Dataset simulate_transport(const OracleConfig& config) { return simulate_transport(config, nullptr); }

data::Dataset simulate_transport(const OracleConfig& c, MassTrace* trace) {
  c.validate();
  const std::size_t n = c.stations.size(), fs = c.fine_substeps;
  const double dt = c.fine_dt_hours();
  const auto geo = geo::GeoCache::from(c.stations);
  const auto graph = geo::build_diffusion_graph(c.stations, c.kappa);
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) degree[i] += graph(i, j);

  std::vector<SegmentEdges> segments;
  std::size_t max_delay = 1;
  for (const auto& w : c.wind) {
    segments.push_back(segment_edges(c, geo, w));
    for (const auto& e : segments.back().edges) max_delay = std::max(max_delay, e.delay);
  }
  const std::size_t ring = max_delay + 1;
  std::vector<double> queue(n * ring, 0.0);

  std::vector<double> u = c.initial;
  if (u.empty()) u.assign(n, c.sink_rate > 0.0 ? c.background / c.sink_rate : 0.0);

  data::Dataset ds;
  ds.stations = c.stations;
  ds.granularity_hours = c.granularity_hours;
  ds.factor_names = {data::kWindSpeed, data::kWindDirection};
  ds.target = Tensor({n, c.length});
  ds.covariates = Tensor({n, c.length, 2});
  const std::int64_t t0 = data::parse_timestamp(c.start_time);
  const auto step_seconds = static_cast<std::int64_t>(std::llround(c.granularity_hours * 3600.0));
  if (trace) {
    trace->station_mass.clear();
    trace->transit_mass.clear();
  }

  std::vector<double> du(n), source(n);
  std::size_t seg = 0;
  std::size_t fine = 0;
  for (std::size_t k = 0; k < c.length; ++k) {
    const double t_coarse = static_cast<double>(k) * c.granularity_hours;
    while (seg + 1 < c.wind.size() && c.wind[seg + 1].start_hour <= t_coarse) ++seg;
    ds.times.push_back(t0 + static_cast<std::int64_t>(k) * step_seconds);
    for (std::size_t i = 0; i < n; ++i) {
      ds.target(i, k) = u[i];
      ds.covariates.at3(i, k, 0) = c.wind[seg].speed_kmh[i];
      ds.covariates.at3(i, k, 1) = c.wind[seg].direction_deg[i];
    }
    if (trace) {
      double sm = 0.0, tm = 0.0;
      for (double v : u) sm += v;
      for (double v : queue) tm += v;
      trace->station_mass.push_back(sm);
      trace->transit_mass.push_back(tm);
    }
    if (k + 1 == c.length) break;

    for (std::size_t s = 0; s < fs; ++s, ++fine) {
      const double t = static_cast<double>(fine) * dt;
      std::size_t fseg = seg;
      while (fseg + 1 < c.wind.size() && c.wind[fseg + 1].start_hour <= t) ++fseg;
      const auto& edges = segments[fseg];

      std::fill(source.begin(), source.end(), c.background);
      for (const auto& e : c.sources)
        if (t >= e.start_hour && t < e.start_hour + e.duration_hours) source[e.station] += e.magnitude;

      for (std::size_t i = 0; i < n; ++i) {
        double lap = -degree[i] * u[i];
        for (std::size_t j = 0; j < n; ++j) lap += graph(i, j) * u[j];
        du[i] = dt * (c.diffusion * lap - (c.sink_rate + edges.outflow[i]) * u[i] + source[i]);
      }
      for (const auto& e : edges.edges) queue[e.to * ring + (fine + e.delay) % ring] += dt * e.rate * u[e.from];
      for (std::size_t i = 0; i < n; ++i) {
        double& slot = queue[i * ring + fine % ring];
        u[i] = std::max(0.0, u[i] + du[i] + slot);
        slot = 0.0;
      }
    }
  }
  return ds;
}

Tensor persistence_forecast(const data::WindowSample& sample) {
  const std::size_t n = sample.inputs.rows(), t = sample.input_length(), h = sample.horizon();
  Tensor out({n, h});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < h; ++k) out(i, k) = sample.inputs(i, t - 1);
  return out;
}

std::size_t cross_correlation_lag(std::span<const double> a, std::span<const double> b, std::size_t max_lag) {
  if (a.size() != b.size()) throw std::invalid_argument("cross_correlation_lag: series lengths differ");
  const std::size_t len = a.size();
  if (len <= 2 * max_lag) throw std::invalid_argument("cross_correlation_lag: series too short for max_lag");
  auto variance = [](std::span<const double> x) {
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s;
  };
  if (!(variance(a) > 0.0) || !(variance(b) > 0.0)) {
    throw std::invalid_argument("cross_correlation_lag: constant series has no correlation");
  }
  std::size_t best = 0;
  double best_corr = -2.0;
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    const std::size_t m = len - lag;
    auto x = a.subspan(0, m);
    auto y = b.subspan(lag, m);
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      mx += x[k];
      my += y[k];
    }
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      sxy += (x[k] - mx) * (y[k] - my);
      sxx += (x[k] - mx) * (x[k] - mx);
      syy += (y[k] - my) * (y[k] - my);
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) continue;
    const double corr = sxy / std::sqrt(sxx * syy);
    if (corr > best_corr) {
      best_corr = corr;
      best = lag;
    }
  }
  return best;
}

}  // namespace airdde::oracle
