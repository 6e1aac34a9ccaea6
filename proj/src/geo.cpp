#include "airdde/geo.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

#include "airdde/csv.hpp"

namespace airdde::geo {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

void check_coordinate(double lat, double lon) {
  if (!(lat >= -90.0 && lat <= 90.0) || !(lon >= -180.0 && lon <= 180.0)) {
    throw std::out_of_range("coordinate out of range: lat " + std::to_string(lat) + ", lon " + std::to_string(lon));
  }
}

}  // namespace

void StationSet::validate() const {
  if (latitudes.size() != ids.size() || longitudes.size() != ids.size()) {
    throw std::invalid_argument("station set fields differ in length");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check_coordinate(latitudes[i], longitudes[i]);
    if (!seen.insert(ids[i]).second) throw std::invalid_argument("duplicate station id: " + ids[i]);
  }
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  check_coordinate(lat1, lon1);
  check_coordinate(lat2, lon2);
  const double p1 = lat1 * kDegToRad, p2 = lat2 * kDegToRad;
  const double dphi = (lat2 - lat1) * kDegToRad;
  const double dlambda = (lon2 - lon1) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0), s2 = std::sin(dlambda / 2.0);
  double a = s1 * s1 + std::cos(p1) * std::cos(p2) * s2 * s2;
  a = std::min(1.0, std::max(0.0, a));
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(a));
}

double initial_bearing_deg(double lat1, double lon1, double lat2, double lon2) {
  check_coordinate(lat1, lon1);
  check_coordinate(lat2, lon2);
  const double p1 = lat1 * kDegToRad, p2 = lat2 * kDegToRad;
  const double dlambda = (lon2 - lon1) * kDegToRad;
  const double y = std::sin(dlambda) * std::cos(p2);
  const double x = std::cos(p1) * std::sin(p2) - std::sin(p1) * std::cos(p2) * std::cos(dlambda);
  double deg = std::atan2(y, x) / kDegToRad;
  deg = std::fmod(deg + 360.0, 360.0);
  return deg;
}

GeoCache GeoCache::from(const StationSet& stations) {
  stations.validate();
  const std::size_t n = stations.size();
  GeoCache cache{Tensor({n, n}), Tensor({n, n})};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      cache.distance_km(i, j) =
          haversine_km(stations.latitudes[i], stations.longitudes[i], stations.latitudes[j], stations.longitudes[j]);
      cache.bearing_deg(i, j) =
          initial_bearing_deg(stations.latitudes[j], stations.longitudes[j], stations.latitudes[i], stations.longitudes[i]);
    }
  }
  return cache;
}

double pairwise_distance_std(const StationSet& stations) {
  const std::size_t n = stations.size();
  std::vector<double> d;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      d.push_back(haversine_km(stations.latitudes[i], stations.longitudes[i], stations.latitudes[j],
                               stations.longitudes[j]));
  if (d.empty()) return 0.0;
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(d.size()));
}

Graph build_diffusion_graph(const StationSet& stations, double kappa, std::optional<double> sigma) {
  stations.validate();
  const std::size_t n = stations.size();
  if (n < 2) throw std::invalid_argument("diffusion graph needs at least two stations");
  if (!(kappa > 0.0 && kappa <= 1.0)) throw std::invalid_argument("kappa must lie in (0, 1]");
  const double bandwidth = sigma ? *sigma : pairwise_distance_std(stations);
  if (!(bandwidth > 0.0)) {
    throw std::invalid_argument("diffusion graph bandwidth is zero (all stations coincide)");
  }
  Graph g{Tensor({n, n}), false};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = haversine_km(stations.latitudes[i], stations.longitudes[i], stations.latitudes[j],
                                    stations.longitudes[j]);
      double w = std::exp(-(d * d) / (bandwidth * bandwidth));
      if (w < kappa) w = 0.0;
      g.weights(i, j) = w;
      g.weights(j, i) = w;
    }
  }
  return g;
}

ad::Var adaptive_adjacency(ad::Var e1, ad::Var e2) {
  return ad::softmax_rows(ad::relu(ad::matmul(e1, ad::transpose(e2))));
}

Graph build_adaptive_adjacency(const Tensor& e1, const Tensor& e2) {
  ad::Tape tape;
  auto a = adaptive_adjacency(tape.constant(e1), tape.constant(e2));
  return Graph{a.value(), true};
}

Graph build_advection_graph(const GeoCache& geo, std::span<const double> wind_speed_kmh,
                            std::span<const double> wind_direction_deg, int tau, double step_hours) {
  const std::size_t n = geo.distance_km.rows();
  if (tau < 1) throw std::invalid_argument("advection graph: tau must be a positive number of steps");
  if (!(step_hours > 0.0)) throw std::invalid_argument("advection graph: step_hours must be positive");
  if (wind_speed_kmh.size() != n || wind_direction_deg.size() != n) {
    throw std::invalid_argument("advection graph: wind fields must have one entry per station");
  }
  const double window_hours = static_cast<double>(tau) * step_hours;
  Graph g{Tensor({n, n}), true};
  for (std::size_t j = 0; j < n; ++j) {
    const double v = wind_speed_kmh[j];
    if (!(v >= 0.0)) throw std::invalid_argument("advection graph: negative wind speed at station " + std::to_string(j));
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      const double c = std::cos((wind_direction_deg[j] - geo.bearing_deg(i, j)) * kDegToRad);
      if (c <= 0.0) continue;
      if (v * c * window_hours >= geo.distance_km(i, j)) g.weights(i, j) = 1.0;
    }
  }
  return g;
}

Graph build_advection_graph(const StationSet& stations, std::span<const double> wind_speed_kmh,
                            std::span<const double> wind_direction_deg, int tau, double step_hours) {
  return build_advection_graph(GeoCache::from(stations), wind_speed_kmh, wind_direction_deg, tau, step_hours);
}

std::vector<std::size_t> neighbor_set(const Graph& graph, std::size_t i) {
  if (i >= graph.size()) throw std::out_of_range("neighbor_set: station index out of range");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < graph.size(); ++j)
    if (graph(i, j) != 0.0) out.push_back(j);
  return out;
}

Tensor row_normalized(const Tensor& weights) {
  Tensor out = weights;
  const std::size_t n = out.rows(), m = out.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) total += out(i, j);
    if (total == 0.0) continue;
    for (std::size_t j = 0; j < m; ++j) out(i, j) /= total;
  }
  return out;
}

StationSet load_stations_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const std::string src = path.string();
  const auto id_col = table.column("id", src);
  const auto lat_col = table.column("lat", src);
  const auto lon_col = table.column("lon", src);
  StationSet s;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string ctx = src + ":" + std::to_string(table.line_numbers[r]);
    s.ids.push_back(table.rows[r][id_col]);
    s.latitudes.push_back(csv::to_double(table.rows[r][lat_col], ctx));
    s.longitudes.push_back(csv::to_double(table.rows[r][lon_col], ctx));
  }
  s.validate();
  return s;
}

void save_stations_csv(const StationSet& stations, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id,lat,lon\n";
  for (std::size_t i = 0; i < stations.size(); ++i) {
    out << stations.ids[i] << ',' << csv::format_double(stations.latitudes[i]) << ','
        << csv::format_double(stations.longitudes[i]) << '\n';
  }
}

void write_graph_csv(const Graph& graph, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    for (std::size_t j = 0; j < graph.size(); ++j) out << (j ? "," : "") << csv::format_double(graph(i, j));
    out << '\n';
  }
}

}  // namespace airdde::geo
