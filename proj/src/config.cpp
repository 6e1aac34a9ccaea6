#include "airdde/config.hpp"

#include <fstream>
#include <functional>
#include <type_traits>
#include <sstream>
#include <stdexcept>

#include "airdde/csv.hpp"

namespace airdde::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v.front() == '-') {
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(out);
}

double to_real(const std::string& key, const std::string& v) {
  try {
    return csv::to_double(v, key);
  } catch (const std::runtime_error& e) {
    throw std::invalid_argument(e.what());
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Field field(const char* key, T RunConfig::*member) {
  Field f{key, nullptr, nullptr};
  if constexpr (std::is_same_v<T, std::string>) {
    f.get = [member](const RunConfig& c) { return c.*member; };
    f.set = [member](RunConfig& c, const std::string& v) { c.*member = v; };
  } else if constexpr (std::is_same_v<T, bool>) {
    f.get = [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); };
    f.set = [member, key](RunConfig& c, const std::string& v) { c.*member = to_bool(key, v); };
  } else if constexpr (std::is_same_v<T, double>) {
    f.get = [member](const RunConfig& c) { return csv::format_double(c.*member); };
    f.set = [member, key](RunConfig& c, const std::string& v) { c.*member = to_real(key, v); };
  } else {
    f.get = [member](const RunConfig& c) { return std::to_string(c.*member); };
    f.set = [member, key](RunConfig& c, const std::string& v) { c.*member = static_cast<T>(to_size(key, v)); };
  }
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      field("data_dir", &RunConfig::data_dir),
      field("stations_file", &RunConfig::stations_file),
      field("series_file", &RunConfig::series_file),
      field("out_dir", &RunConfig::out_dir),
      field("checkpoint", &RunConfig::checkpoint),
      field("split", &RunConfig::split),
      field("train_stride", &RunConfig::train_stride),
      field("eval_stride", &RunConfig::eval_stride),
      field("input_length", &RunConfig::input_length),
      field("horizon", &RunConfig::horizon),
      field("embed_dim", &RunConfig::embed_dim),
      field("hidden_dim", &RunConfig::hidden_dim),
      field("hops", &RunConfig::hops),
      field("memory_units", &RunConfig::memory_units),
      field("tau", &RunConfig::tau),
      field("diffusion", &RunConfig::diffusion),
      field("delta", &RunConfig::delta),
      field("substeps", &RunConfig::substeps),
      field("kappa", &RunConfig::kappa),
      field("use_advection", &RunConfig::use_advection),
      field("future_covariates", &RunConfig::future_covariates),
      field("lr", &RunConfig::lr),
      field("batch_size", &RunConfig::batch_size),
      field("max_epochs", &RunConfig::max_epochs),
      field("patience", &RunConfig::patience),
      field("seed", &RunConfig::seed),
      field("clip_norm", &RunConfig::clip_norm),
      field("threads", &RunConfig::threads),
      field("resume", &RunConfig::resume),
      field("missing_rate", &RunConfig::missing_rate),
      field("snr_db", &RunConfig::snr_db),
      field("metrics_file", &RunConfig::metrics_file),
      field("dump_trajectory", &RunConfig::dump_trajectory),
      field("gradcheck_tolerance", &RunConfig::gradcheck_tolerance),
      field("synth_stations", &RunConfig::synth_stations),
      field("synth_length", &RunConfig::synth_length),
  };
  return all;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

void RunConfig::merge_text(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  RunConfig c;
  c.merge_text(text.str(), path.string());
  return c;
}

std::vector<std::pair<std::string, std::string>> RunConfig::pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : pairs()) out += k + " = " + v + "\n";
  return out;
}

void RunConfig::validate() const {
  data::SplitRatios::parse(split);
  if (train_stride < 1 || eval_stride < 1) throw std::invalid_argument("strides must be at least 1");
  model_config(2, 1).validate();
  train_config().validate();
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw std::invalid_argument("missing_rate must lie in [0, 1)");
  if (!(snr_db >= 0.0)) throw std::invalid_argument("snr_db must be non-negative (0 disables noise)");
  if (!(gradcheck_tolerance > 0.0)) throw std::invalid_argument("gradcheck_tolerance must be positive");
  if (out_dir.empty()) throw std::invalid_argument("out_dir must not be empty");
}

std::filesystem::path RunConfig::stations_path() const {
  return stations_file.empty() ? std::filesystem::path(data_dir) / "stations.csv" : std::filesystem::path(stations_file);
}

std::filesystem::path RunConfig::series_path() const {
  return series_file.empty() ? std::filesystem::path(data_dir) / "series.csv" : std::filesystem::path(series_file);
}

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? std::filesystem::path(out_dir) / "best.ckpt" : std::filesystem::path(checkpoint);
}

model::ModelConfig RunConfig::model_config(std::size_t stations, std::size_t feature_dim) const {
  model::ModelConfig m;
  m.N = stations;
  m.T = input_length;
  m.H = horizon;
  m.d = embed_dim;
  m.d_e = hidden_dim;
  m.K = hops;
  m.m = memory_units;
  m.tau = tau;
  m.D = diffusion;
  m.delta = delta;
  m.substeps = substeps;
  m.kappa = kappa;
  m.feature_dim = feature_dim;
  m.use_advection = use_advection;
  m.future_covariates = future_covariates;
  return m;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t;
  t.adam.lr = lr;
  t.batch_size = batch_size;
  t.max_epochs = max_epochs;
  t.patience = patience;
  t.seed = seed;
  t.clip_norm = clip_norm;
  t.threads = threads;
  return t;
}

data::WindowOptions RunConfig::window_options(std::size_t stride) const {
  return data::WindowOptions{input_length, horizon, stride, static_cast<int>(tau)};
}

}  // namespace airdde::cli
