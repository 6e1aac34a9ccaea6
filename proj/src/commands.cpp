#include "airdde/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "airdde/checkpoint.hpp"
#include "airdde/csv.hpp"
#include "airdde/log.hpp"
#include "airdde/oracle.hpp"

namespace airdde::cli {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

std::size_t steps_per_day(const data::Dataset& d) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(24.0 / d.granularity_hours)));
}

void write_curve(const fs::path& path, const std::vector<train::EpochRecord>& curve) {
  auto out = open_out(path);
  out << "epoch,train_loss,val_mae,improved\n";
  for (const auto& r : curve) {
    out << r.epoch << ',' << csv::format_double(r.train_loss) << ',' << csv::format_double(r.val_mae) << ','
        << (r.improved ? 1 : 0) << '\n';
  }
}

void write_metrics_rows(std::ostream& out, const char* name, const train::Metrics& all,
                        const std::vector<train::Metrics>& days) {
  auto row = [&](const std::string& scope, const train::Metrics& m) {
    out << name << ',' << scope << ',' << csv::format_double(m.mae) << ',' << csv::format_double(m.rmse) << ','
        << csv::format_double(m.mape) << ',' << csv::format_double(m.smape) << ',' << m.count << '\n';
  };
  row("all", all);
  for (std::size_t d = 0; d < days.size(); ++d) row("day" + std::to_string(d + 1), days[d]);
}

Checkpoint best_checkpoint(const model::AirDde& model, const train::TrainState& state) {
  Checkpoint ck = model.to_checkpoint();
  ck.meta["train.best_epoch"] = std::to_string(state.best_epoch);
  ck.meta["train.best_val_mae"] = csv::format_double(state.best_val_mae);
  return ck;
}

}  // namespace

Prepared split_dataset(const RunConfig& config, data::Dataset dataset) {
  dataset.validate();
  Prepared p;
  p.splits = data::chronological_split(dataset, data::SplitRatios::parse(config.split),
                                       config.input_length + config.horizon);
  p.stats = data::NormStats::fit(p.splits.train);
  p.dataset = std::move(dataset);
  return p;
}

Prepared load_and_split(const RunConfig& config) {
  return split_dataset(config, data::load_dataset(config.stations_path(), config.series_path()));
}

model::AirDde load_model(const RunConfig& config, const data::Dataset& dataset, const Checkpoint& ckpt) {
  auto mean = ckpt.tensors.find("norm.mean");
  auto sd = ckpt.tensors.find("norm.std");
  if (mean == ckpt.tensors.end() || sd == ckpt.tensors.end()) {
    throw std::runtime_error("checkpoint has no normalization statistics");
  }
  data::NormStats stats;
  stats.mean = mean->second.raw();
  stats.stddev = sd->second.raw();
  const std::size_t features = data::model_feature_names(dataset).size();
  model::AirDde model(config.model_config(dataset.num_stations(), features), dataset.stations, stats, 0);
  model.load_params(ckpt);
  return model;
}

EvalReport evaluate_on_test(const model::AirDde& model, const Prepared& p, const RunConfig& config) {
  const data::Dataset& clean = p.splits.test;
  data::Dataset inputs = clean;
  if (config.missing_rate > 0.0) {
    const auto fill = data::raw_channel_means(p.splits.train);
    inputs = data::perturb_missing(inputs, config.missing_rate, config.seed, fill).data;
  }
  if (config.snr_db > 0.0) inputs = data::perturb_noise(inputs, config.snr_db, config.seed);
  const auto windows = data::make_windows(inputs, clean, config.window_options(config.eval_stride));

  const std::size_t spd = steps_per_day(clean);
  train::MetricAccumulator model_acc(config.horizon, spd), pers_acc(config.horizon, spd);
  EvalReport r;
  r.model = train::evaluate_model(model, windows, config.threads, &model_acc);
  r.persistence = train::evaluate_persistence(windows, &pers_acc);
  r.model_by_day = model_acc.by_day();
  r.persistence_by_day = pers_acc.by_day();
  r.windows = windows.size();
  return r;
}

train::TrainState run_train(const RunConfig& config, const train::TrainHooks& extra) {
  config.validate();
  Prepared p = load_and_split(config);
  const fs::path out(config.out_dir);
  ensure_dir(out);
  open_out(out / "config.txt") << config.to_text();
  data::write_manifest(out / "manifest.txt", p.dataset, &p.stats);

  const auto train_windows = data::make_windows(p.splits.train, config.window_options(config.train_stride));
  const auto val_windows = data::make_windows(p.splits.val, config.window_options(config.eval_stride));
  const std::size_t features = data::model_feature_names(p.dataset).size();
  model::AirDde model(config.model_config(p.dataset.num_stations(), features), p.dataset.stations, p.stats,
                      config.seed);
  log::info("training on " + std::to_string(train_windows.size()) + " windows, validating on " +
            std::to_string(val_windows.size()) + ", " + std::to_string(model.params().total_elements()) +
            " parameters");

  std::optional<train::TrainState> resume;
  if (config.resume) {
    const fs::path last = out / "last.ckpt";
    if (!fs::exists(last)) throw std::runtime_error("resume requested but " + last.string() + " does not exist");
    const Checkpoint ck = load_checkpoint(last);
    model.load_params(ck);
    resume = train::TrainState::from_checkpoint(ck, model.params());
    log::info("resuming after epoch " + std::to_string(resume->epochs_done));
  }

  train::TrainHooks hooks = extra;
  hooks.on_epoch = [&](const train::TrainState& state, const model::AirDde& m) {
    Checkpoint last = m.to_checkpoint();
    state.to_checkpoint(last, m.params());
    save_checkpoint(last, out / "last.ckpt");
    if (!state.curve.empty() && state.curve.back().improved) save_checkpoint(best_checkpoint(m, state), out / "best.ckpt");
    write_curve(out / "loss_curve.csv", state.curve);
    if (extra.on_epoch) extra.on_epoch(state, m);
  };
  train::TrainState state = train::train_loop(model, train_windows, val_windows, config.train_config(), hooks, resume);
  save_checkpoint(best_checkpoint(model, state), out / "best.ckpt");
  write_curve(out / "loss_curve.csv", state.curve);
  return state;
}

EvalReport run_eval(const RunConfig& config) {
  config.validate();
  const fs::path ckpt_path = config.checkpoint_path();
  if (!fs::exists(ckpt_path)) throw std::runtime_error("missing checkpoint " + ckpt_path.string());
  Prepared p = load_and_split(config);
  const model::AirDde model = load_model(config, p.dataset, load_checkpoint(ckpt_path));
  return evaluate_on_test(model, p, config);
}

GradcheckReport toy_gradcheck(std::uint64_t seed, double eps) {
  const data::Dataset ds = oracle::simulate_transport(oracle::acceptance_config(seed, 4, 48));
  const data::Dataset train = ds.slice(0, 24);
  const auto windows = data::make_windows(ds, data::WindowOptions{6, 3, 1, 2});
  model::ModelConfig c;
  c.N = 4;
  c.T = 6;
  c.H = 3;
  c.tau = 2;
  c.d = 3;
  c.d_e = 4;
  c.K = 2;
  c.m = 3;
  c.substeps = 2;
  c.feature_dim = 2;
  model::AirDde model(c, ds.stations, data::NormStats::fit(train), seed);
  const data::WindowSample& sample = windows.at(8);
  auto loss = [&](const Bound& p) { return model.loss(p, sample); };
  GradcheckReport r;
  r.groups = check_parameter_gradients(loss, model.params(), eps);
  for (const auto& g : r.groups) r.max_error = std::max(r.max_error, g.max_rel_error);
  return r;
}

int cmd_synth(const RunConfig& config, std::ostream& out) {
  oracle::OracleConfig oc = oracle::acceptance_config(config.seed, config.synth_stations, config.synth_length);
  const data::Dataset ds = oracle::simulate_transport(oc);
  const fs::path dir(config.out_dir);
  ensure_dir(dir);
  data::save_dataset(ds, dir / "stations.csv", dir / "series.csv");
  data::write_manifest(dir / "manifest.txt", ds, nullptr);
  out << "wrote " << ds.num_stations() << " stations x " << ds.length() << " steps to " << dir.string() << '\n';
  return 0;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  const train::TrainState state = run_train(config);
  out << "epochs " << state.epochs_done << ", best epoch " << state.best_epoch << ", best val MAE "
      << csv::format_double(state.best_val_mae) << '\n';
  out << "run directory " << config.out_dir << '\n';
  return 0;
}

int cmd_forecast(const RunConfig& config, std::ostream& out) {
  config.validate();
  const fs::path ckpt_path = config.checkpoint_path();
  if (!fs::exists(ckpt_path)) throw std::runtime_error("missing checkpoint " + ckpt_path.string());
  Prepared p = load_and_split(config);
  const model::AirDde model = load_model(config, p.dataset, load_checkpoint(ckpt_path));
  const auto windows = data::make_windows(p.splits.test, config.window_options(config.eval_stride));
  const fs::path dir(config.out_dir);
  ensure_dir(dir);
  auto csv_out = open_out(dir / "forecast.csv");
  csv_out << "window_start,timestamp,station_id,step,prediction,target\n";
  const auto& test = p.splits.test;
  for (const auto& w : windows) {
    const Tensor pred = model.forecast(w);
    for (std::size_t k = 0; k < w.horizon(); ++k) {
      const std::string stamp = data::format_timestamp(test.times[w.start + w.input_length() + k]);
      for (std::size_t i = 0; i < pred.rows(); ++i) {
        csv_out << data::format_timestamp(test.times[w.start]) << ',' << stamp << ',' << test.stations.ids[i] << ','
                << k + 1 << ',' << csv::format_double(pred(i, k)) << ',' << csv::format_double(w.targets(i, k))
                << '\n';
      }
    }
  }
  if (config.dump_trajectory && !windows.empty()) {
    ad::Tape tape;
    Bound params(tape, model.params(), false);
    model::ForwardTrace trace;
    model.forward(params, windows.front(), &trace);
    auto traj = open_out(dir / "trajectory.csv");
    traj << "t,station,dim,value\n";
    for (const auto& knot : trace.history.knots()) {
      const Tensor& h = knot.state.value();
      for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t d = 0; d < h.cols(); ++d)
          traj << csv::format_double(knot.time) << ',' << test.stations.ids[i] << ',' << d << ','
               << csv::format_double(h(i, d)) << '\n';
    }
  }
  out << "wrote " << windows.size() << " forecasts to " << (dir / "forecast.csv").string() << '\n';
  return 0;
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
  const EvalReport r = run_eval(config);
  const fs::path dir(config.out_dir);
  ensure_dir(dir);
  auto csv_out = open_out(dir / config.metrics_file);
  csv_out << "model,scope,mae,rmse,mape,smape,count\n";
  write_metrics_rows(csv_out, "airdde", r.model, r.model_by_day);
  write_metrics_rows(csv_out, "persistence", r.persistence, r.persistence_by_day);
  out << std::fixed << std::setprecision(4);
  out << "windows " << r.windows << " missing_rate " << config.missing_rate << " snr_db " << config.snr_db << '\n';
  out << "airdde       MAE " << r.model.mae << " RMSE " << r.model.rmse << " MAPE " << r.model.mape << "% SMAPE "
      << r.model.smape << '\n';
  out << "persistence  MAE " << r.persistence.mae << " RMSE " << r.persistence.rmse << " MAPE " << r.persistence.mape
      << "% SMAPE " << r.persistence.smape << '\n';
  return 0;
}

int cmd_gradcheck(const RunConfig& config, std::ostream& out) {
  config.validate();
  const GradcheckReport r = toy_gradcheck(config.seed);
  out << std::scientific << std::setprecision(3);
  for (const auto& g : r.groups) {
    out << std::left << std::setw(12) << g.group << " max_rel_error " << g.max_rel_error << " coords " << g.coordinates
        << '\n';
  }
  const bool ok = r.max_error <= config.gradcheck_tolerance;
  out << (ok ? "PASS" : "FAIL") << " max " << r.max_error << " tolerance " << config.gradcheck_tolerance << '\n';
  return ok ? 0 : 1;
}

}  // namespace airdde::cli
