#include "airdde/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "airdde/csv.hpp"

namespace airdde::data {

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

std::int64_t parse_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = ' ';
  const int n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
  if (n < 3 || (n > 3 && n < 6) || (sep != ' ' && sep != 'T') || mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 ||
      h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59) {
    throw std::invalid_argument("bad timestamp '" + text + "' (expected YYYY-MM-DD HH:MM:SS)");
  }
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(std::int64_t seconds) {
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  std::int64_t y = 0;
  unsigned m = 0, d = 0;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u %02lld:%02lld:%02lld", static_cast<long long>(y), m, d,
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

std::size_t Dataset::factor_index(const std::string& name) const {
  auto it = std::find(factor_names.begin(), factor_names.end(), name);
  if (it == factor_names.end()) throw std::out_of_range("dataset has no factor '" + name + "'");
  return static_cast<std::size_t>(it - factor_names.begin());
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > length()) throw std::out_of_range("dataset slice out of range");
  const std::size_t n = num_stations(), f = num_factors(), len = end - begin;
  Dataset out;
  out.stations = stations;
  out.granularity_hours = granularity_hours;
  out.factor_names = factor_names;
  out.times.assign(times.begin() + static_cast<std::ptrdiff_t>(begin), times.begin() + static_cast<std::ptrdiff_t>(end));
  out.target = Tensor({n, len});
  out.covariates = Tensor({n, len, f});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < len; ++t) {
      out.target(i, t) = target(i, begin + t);
      for (std::size_t c = 0; c < f; ++c) out.covariates.at3(i, t, c) = covariates.at3(i, begin + t, c);
    }
  }
  return out;
}

void Dataset::validate() const {
  stations.validate();
  const std::size_t n = num_stations(), len = length(), f = num_factors();
  if (target.shape() != Shape{n, len}) throw std::invalid_argument("dataset target shape mismatch");
  if (covariates.shape() != Shape{n, len, f}) throw std::invalid_argument("dataset covariate shape mismatch");
  const auto step = static_cast<std::int64_t>(std::llround(granularity_hours * 3600.0));
  for (std::size_t t = 1; t < len; ++t) {
    if (times[t] - times[t - 1] != step) {
      throw std::invalid_argument("timestamp gap: expected " + format_timestamp(times[t - 1] + step) + " after " +
                                  format_timestamp(times[t - 1]));
    }
  }
  const std::size_t ws = factor_index(kWindSpeed), wd = factor_index(kWindDirection);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < len; ++t) {
      const double v = covariates.at3(i, t, ws), dir = covariates.at3(i, t, wd);
      if (!(v >= 0.0)) {
        throw std::invalid_argument("negative wind speed at station " + stations.ids[i] + ", " + format_timestamp(times[t]));
      }
      if (!(dir >= 0.0 && dir < 360.0)) {
        throw std::invalid_argument("wind direction outside [0, 360) at station " + stations.ids[i] + ", " +
                                    format_timestamp(times[t]));
      }
    }
  }
}

Dataset load_dataset(const std::filesystem::path& stations_path, const std::filesystem::path& series_path) {
  Dataset ds;
  ds.stations = geo::load_stations_csv(stations_path);
  const auto table = csv::read(series_path);
  const std::string src = series_path.string();
  const auto ts_col = table.column("timestamp", src);
  const auto st_col = table.column("station_id", src);
  const auto tg_col = table.column("target", src);
  std::vector<std::size_t> factor_cols;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == ts_col || c == st_col || c == tg_col) continue;
    factor_cols.push_back(c);
    ds.factor_names.push_back(table.header[c]);
  }
  table.column(kWindSpeed, src);
  table.column(kWindDirection, src);

  std::unordered_map<std::string, std::size_t> station_index;
  for (std::size_t i = 0; i < ds.stations.size(); ++i) station_index[ds.stations.ids[i]] = i;

  std::vector<std::int64_t> row_time(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string ctx = src + ":" + std::to_string(table.line_numbers[r]);
    try {
      row_time[r] = parse_timestamp(table.rows[r][ts_col]);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(ctx + ": " + e.what());
    }
  }
  std::vector<std::int64_t> times = row_time;
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  if (times.size() < 2) throw std::runtime_error(src + ": need at least two timestamps");

  std::int64_t step = times[1] - times[0];
  for (std::size_t t = 1; t < times.size(); ++t) step = std::min(step, times[t] - times[t - 1]);
  for (std::size_t t = 1; t < times.size(); ++t) {
    if (times[t] - times[t - 1] != step) {
      throw std::runtime_error(src + ": timestamp gap, missing " + format_timestamp(times[t - 1] + step) +
                               " (next present: " + format_timestamp(times[t]) + ")");
    }
  }
  ds.times = times;
  ds.granularity_hours = static_cast<double>(step) / 3600.0;

  const std::size_t n = ds.stations.size(), len = times.size(), f = factor_cols.size();
  ds.target = Tensor({n, len});
  ds.covariates = Tensor({n, len, f});
  std::vector<std::uint8_t> seen(n * len, 0);
  const std::size_t ws = ds.factor_index(kWindSpeed), wd = ds.factor_index(kWindDirection);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string ctx = src + ":" + std::to_string(table.line_numbers[r]);
    auto it = station_index.find(row[st_col]);
    if (it == station_index.end()) throw std::runtime_error(ctx + ": unknown station '" + row[st_col] + "'");
    const std::size_t i = it->second;
    const auto t = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), row_time[r]) - times.begin());
    if (seen[i * len + t]) throw std::runtime_error(ctx + ": duplicate row for station " + row[st_col]);
    seen[i * len + t] = 1;
    ds.target(i, t) = csv::to_double(row[tg_col], ctx);
    for (std::size_t c = 0; c < f; ++c) ds.covariates.at3(i, t, c) = csv::to_double(row[factor_cols[c]], ctx);
    const double v = ds.covariates.at3(i, t, ws), dir = ds.covariates.at3(i, t, wd);
    if (!(v >= 0.0)) throw std::runtime_error(ctx + ": negative wind speed " + row[factor_cols[ws]]);
    if (!(dir >= 0.0 && dir < 360.0)) {
      throw std::runtime_error(ctx + ": wind direction " + row[factor_cols[wd]] + " outside [0, 360)");
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < len; ++t)
      if (!seen[i * len + t]) {
        throw std::runtime_error(src + ": no row for station " + ds.stations.ids[i] + " at " +
                                 format_timestamp(times[t]));
      }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& stations_path,
                  const std::filesystem::path& series_path) {
  geo::save_stations_csv(dataset.stations, stations_path);
  std::ofstream out(series_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + series_path.string());
  out << "timestamp,station_id,target";
  for (const auto& name : dataset.factor_names) out << ',' << name;
  out << '\n';
  for (std::size_t t = 0; t < dataset.length(); ++t) {
    const std::string stamp = format_timestamp(dataset.times[t]);
    for (std::size_t i = 0; i < dataset.num_stations(); ++i) {
      out << stamp << ',' << dataset.stations.ids[i] << ',' << csv::format_double(dataset.target(i, t));
      for (std::size_t c = 0; c < dataset.num_factors(); ++c) {
        out << ',' << csv::format_double(dataset.covariates.at3(i, t, c));
      }
      out << '\n';
    }
  }
}

std::vector<std::string> model_feature_names(const Dataset& dataset) {
  std::vector<std::string> names{"wind_u", "wind_v"};
  for (const auto& f : dataset.factor_names)
    if (f != kWindSpeed && f != kWindDirection) names.push_back(f);
  return names;
}

Tensor model_features(const Dataset& dataset) {
  const std::size_t n = dataset.num_stations(), len = dataset.length();
  const std::size_t ws = dataset.factor_index(kWindSpeed), wd = dataset.factor_index(kWindDirection);
  std::vector<std::size_t> passthrough;
  for (std::size_t c = 0; c < dataset.num_factors(); ++c)
    if (c != ws && c != wd) passthrough.push_back(c);
  const std::size_t f = 2 + passthrough.size();
  Tensor out({n, len, f});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < len; ++t) {
      const double v = dataset.covariates.at3(i, t, ws);
      const double dir = dataset.covariates.at3(i, t, wd) * kDegToRad;
      out.at3(i, t, 0) = v * std::sin(dir);
      out.at3(i, t, 1) = v * std::cos(dir);
      for (std::size_t k = 0; k < passthrough.size(); ++k) out.at3(i, t, 2 + k) = dataset.covariates.at3(i, t, passthrough[k]);
    }
  }
  return out;
}

NormStats NormStats::fit(const Dataset& train) {
  const Tensor feats = model_features(train);
  const std::size_t n = train.num_stations(), len = train.length(), f = feats.dim(2);
  NormStats s;
  auto moments = [&](auto&& value) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < len; ++t) mean += value(i, t);
    mean /= static_cast<double>(n * len);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < len; ++t) var += (value(i, t) - mean) * (value(i, t) - mean);
    double sd = std::sqrt(var / static_cast<double>(n * len));
    if (!(sd > 1e-12)) sd = 1.0;
    s.mean.push_back(mean);
    s.stddev.push_back(sd);
  };
  moments([&](std::size_t i, std::size_t t) { return train.target(i, t); });
  for (std::size_t c = 0; c < f; ++c) moments([&](std::size_t i, std::size_t t) { return feats.at3(i, t, c); });
  return s;
}

std::vector<double> raw_channel_means(const Dataset& dataset) {
  const std::size_t n = dataset.num_stations(), len = dataset.length(), f = dataset.num_factors();
  std::vector<double> means(1 + f, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < len; ++t) {
      means[0] += dataset.target(i, t);
      for (std::size_t c = 0; c < f; ++c) means[1 + c] += dataset.covariates.at3(i, t, c);
    }
  for (auto& m : means) m /= static_cast<double>(n * len);
  return means;
}

SplitRatios SplitRatios::parse(const std::string& text) {
  SplitRatios r;
  char c1 = 0, c2 = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%lf%c%lf%c%lf%c", &r.train, &c1, &r.val, &c2, &r.test, &tail) != 5 || c1 != ':' ||
      c2 != ':') {
    throw std::invalid_argument("split ratio must look like 'train:val:test', got '" + text + "'");
  }
  if (!(r.train > 0.0 && r.val > 0.0 && r.test > 0.0)) {
    throw std::invalid_argument("split ratios must all be positive, got '" + text + "'");
  }
  return r;
}

Splits chronological_split(const Dataset& dataset, const SplitRatios& ratios, std::size_t min_length) {
  if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0)) {
    throw std::invalid_argument("split ratios must all be positive");
  }
  const double total = ratios.train + ratios.val + ratios.test;
  const std::size_t len = dataset.length();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(len) * ratios.train / total));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(len) * ratios.val / total));
  const std::size_t n_test = len - std::min(len, n_train + n_val);
  const std::size_t need = std::max<std::size_t>(min_length, 1);
  auto check = [&](const char* name, std::size_t n) {
    if (n < need) {
      throw std::invalid_argument(std::string(name) + " split has " + std::to_string(n) + " steps, needs at least " +
                                  std::to_string(need));
    }
  };
  check("train", n_train);
  check("validation", n_val);
  check("test", n_test);
  return Splits{dataset.slice(0, n_train), dataset.slice(n_train, n_train + n_val),
                dataset.slice(n_train + n_val, len)};
}

std::shared_ptr<const std::vector<geo::Graph>> split_advection_graphs(const Dataset& split, int tau) {
  const auto geo_cache = geo::GeoCache::from(split.stations);
  const std::size_t n = split.num_stations(), len = split.length();
  const std::size_t ws = split.factor_index(kWindSpeed), wd = split.factor_index(kWindDirection);
  auto graphs = std::make_shared<std::vector<geo::Graph>>();
  graphs->reserve(len);
  std::vector<double> speed(n), dir(n);
  for (std::size_t a = 0; a < len; ++a) {
    const std::size_t w = a >= static_cast<std::size_t>(tau) ? a - static_cast<std::size_t>(tau) : 0;
    for (std::size_t i = 0; i < n; ++i) {
      speed[i] = split.covariates.at3(i, w, ws);
      dir[i] = split.covariates.at3(i, w, wd);
    }
    graphs->push_back(geo::build_advection_graph(geo_cache, speed, dir, tau, split.granularity_hours));
  }
  return graphs;
}

std::vector<WindowSample> make_windows(const Dataset& inputs, const Dataset& targets, const WindowOptions& o) {
  if (o.input_length < 1 || o.horizon < 1 || o.stride < 1) {
    throw std::invalid_argument("window input length, horizon and stride must be positive");
  }
  if (inputs.length() != targets.length() || inputs.num_stations() != targets.num_stations()) {
    throw std::invalid_argument("input and target splits are not aligned");
  }
  const std::size_t len = inputs.length(), T = o.input_length, H = o.horizon;
  if (len < T + H) {
    throw std::invalid_argument("split of length " + std::to_string(len) + " is shorter than input + horizon = " +
                                std::to_string(T + H));
  }
  const Tensor feats = model_features(inputs);
  const std::size_t n = inputs.num_stations(), f = feats.dim(2);
  auto graphs = split_advection_graphs(inputs, o.tau);
  const std::size_t count = (len - T - H) / o.stride + 1;
  std::vector<WindowSample> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    WindowSample s;
    s.start = w * o.stride;
    s.inputs = Tensor({n, T});
    s.features = Tensor({n, T, f});
    s.targets = Tensor({n, H});
    s.future_features = Tensor({n, H, f});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < T; ++t) {
        s.inputs(i, t) = inputs.target(i, s.start + t);
        for (std::size_t c = 0; c < f; ++c) s.features.at3(i, t, c) = feats.at3(i, s.start + t, c);
      }
      for (std::size_t h = 0; h < H; ++h) {
        s.targets(i, h) = targets.target(i, s.start + T + h);
        for (std::size_t c = 0; c < f; ++c) s.future_features.at3(i, h, c) = feats.at3(i, s.start + T + h, c);
      }
    }
    s.graphs = graphs;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<WindowSample> make_windows(const Dataset& split, const WindowOptions& options) {
  return make_windows(split, split, options);
}

namespace {

double& raw_entry(Dataset& d, std::size_t i, std::size_t t, std::size_t channel) {
  return channel == 0 ? d.target(i, t) : d.covariates.at3(i, t, channel - 1);
}

}  // namespace

MissingResult perturb_missing(const Dataset& split, double rate, std::uint64_t seed, std::span<const double> fill) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("missing rate must lie in [0, 1)");
  const std::size_t n = split.num_stations(), len = split.length(), channels = 1 + split.num_factors();
  if (fill.size() != channels) throw std::invalid_argument("perturb_missing: need one fill value per raw channel");
  MissingResult result{split, Tensor({n, len, channels})};
  if (rate == 0.0) return result;
  for (std::size_t i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), 0x6d697373u};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < len; ++t) {
        if (unit(rng) >= rate) continue;
        result.mask.at3(i, t, c) = 1.0;
        raw_entry(result.data, i, t, c) = t == 0 ? fill[c] : raw_entry(result.data, i, t - 1, c);
      }
    }
  }
  return result;
}

Dataset perturb_noise(const Dataset& split, double snr_db, std::uint64_t seed) {
  const std::size_t n = split.num_stations(), len = split.length(), channels = 1 + split.num_factors();
  const std::size_t ws = split.factor_index(kWindSpeed), wd = split.factor_index(kWindDirection);
  Dataset out = split;
  const double ratio = std::pow(10.0, snr_db / 10.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), 0x6e6f6973u};
    std::mt19937_64 rng(seq);
    for (std::size_t c = 0; c < channels; ++c) {
      double power = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        const double v = raw_entry(out, i, t, c);
        power += v * v;
      }
      power /= static_cast<double>(len);
      if (!(power > 0.0) || !std::isfinite(power)) {
        throw std::invalid_argument("perturb_noise: zero-power signal at station " + split.stations.ids[i] +
                                    ", channel " + std::to_string(c));
      }
      std::normal_distribution<double> noise(0.0, std::sqrt(power / ratio));
      for (std::size_t t = 0; t < len; ++t) {
        double& v = raw_entry(out, i, t, c);
        v += noise(rng);
        if (c == 1 + ws) v = std::max(0.0, v);
        if (c == 1 + wd) {
          v = std::fmod(v, 360.0);
          if (v < 0.0) v += 360.0;
          if (v >= 360.0) v = 0.0;
        }
      }
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const Dataset& dataset, const NormStats* stats) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "format=airdde-manifest-1\n";
  out << "stations=" << dataset.num_stations() << '\n';
  out << "length=" << dataset.length() << '\n';
  out << "granularity_hours=" << csv::format_double(dataset.granularity_hours) << '\n';
  if (dataset.length() > 0) {
    out << "start=" << format_timestamp(dataset.times.front()) << '\n';
    out << "end=" << format_timestamp(dataset.times.back()) << '\n';
  }
  out << "channel.0=target\n";
  for (std::size_t c = 0; c < dataset.num_factors(); ++c) out << "channel." << c + 1 << '=' << dataset.factor_names[c] << '\n';
  const auto features = model_feature_names(dataset);
  out << "feature.0=target\n";
  for (std::size_t c = 0; c < features.size(); ++c) out << "feature." << c + 1 << '=' << features[c] << '\n';
  if (stats) {
    for (std::size_t c = 0; c < stats->mean.size(); ++c) {
      out << "norm.mean." << c << '=' << csv::format_double(stats->mean[c]) << '\n';
      out << "norm.std." << c << '=' << csv::format_double(stats->stddev[c]) << '\n';
    }
  }
}

}  // namespace airdde::data
