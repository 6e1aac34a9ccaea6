#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "airdde/autodiff.hpp"
#include "airdde/tensor.hpp"

namespace airdde::geo {

inline constexpr double kEarthRadiusKm = 6371.0;

struct StationSet {
  std::vector<std::string> ids;
  std::vector<double> latitudes;
  std::vector<double> longitudes;

  std::size_t size() const { return ids.size(); }
  /// Checks coordinate ranges, equal field lengths and unique ids.
  void validate() const;
};

/// Dense N x N adjacency. Entry (i, j) is the weight of the edge j -> i, so
/// row i lists what station i receives from; a message-passing product A*H
/// aggregates into row i.
struct Graph {
  Tensor weights;
  bool directed = false;

  std::size_t size() const { return weights.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return weights(i, j); }
};

double haversine_km(double lat1, double lon1, double lat2, double lon2);
/// Initial great-circle bearing from point 1 to point 2, degrees clockwise from north in [0, 360).
double initial_bearing_deg(double lat1, double lon1, double lat2, double lon2);

/// Pairwise distances and bearings, reused when building many advection graphs.
struct GeoCache {
  Tensor distance_km;  // (i, j): distance between i and j
  Tensor bearing_deg;  // (i, j): bearing from j toward i

  static GeoCache from(const StationSet& stations);
};

/// Population standard deviation over unordered station pairs.
double pairwise_distance_std(const StationSet& stations);

/// Gaussian-kernel graph exp(-d^2 / sigma^2) with entries below kappa zeroed
/// and an empty diagonal. sigma defaults to the pairwise distance std.
Graph build_diffusion_graph(const StationSet& stations, double kappa = 0.1,
                            std::optional<double> sigma = std::nullopt);

/// softmax_rows(relu(E1 * E2^T)), recorded on the tape.
ad::Var adaptive_adjacency(ad::Var e1, ad::Var e2);
Graph build_adaptive_adjacency(const Tensor& e1, const Tensor& e2);

/// Binary wind-transport graph: edge j -> i when the along-bearing wind at j
/// covers d_ij within tau * step_hours. Wind direction is where the wind
/// blows toward, degrees clockwise from north.
Graph build_advection_graph(const GeoCache& geo, std::span<const double> wind_speed_kmh,
                            std::span<const double> wind_direction_deg, int tau, double step_hours);
Graph build_advection_graph(const StationSet& stations, std::span<const double> wind_speed_kmh,
                            std::span<const double> wind_direction_deg, int tau, double step_hours);

/// Sorted sources j with an edge j -> i.
std::vector<std::size_t> neighbor_set(const Graph& graph, std::size_t i);

/// Rows rescaled to sum to one; empty rows stay zero.
Tensor row_normalized(const Tensor& weights);

StationSet load_stations_csv(const std::filesystem::path& path);
void save_stations_csv(const StationSet& stations, const std::filesystem::path& path);
void write_graph_csv(const Graph& graph, const std::filesystem::path& path);

}  // namespace airdde::geo
