#include "airdde/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "airdde/log.hpp"
#include "airdde/oracle.hpp"

namespace airdde::train {

AdamState AdamState::zeros(const std::vector<Tensor>& like) {
  AdamState s;
  for (const auto& t : like) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamOptions& o) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].shape() != params[k].shape() || state.m[k].shape() != params[k].shape() ||
        state.v[k].shape() != params[k].shape()) {
      throw ShapeError("adam_step: shape mismatch for tensor " + std::to_string(k) + ": " +
                       shape_to_string(params[k].shape()) + " vs gradient " + shape_to_string(grads[k].shape()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].values();
    auto g = grads[k].values();
    auto m = state.m[k].values();
    auto v = state.v[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      p[i] -= o.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (!(adam.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0 && adam.beta2 > 0.0 && adam.beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in (0, 1)");
  }
  if (!(adam.eps > 0.0)) throw std::invalid_argument("Adam eps must be positive");
  if (batch_size < 1 || max_epochs < 1 || patience < 1) {
    throw std::invalid_argument("batch size, max epochs and patience must be positive");
  }
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("clip norm must be non-negative");
  if (threads < 1) throw std::invalid_argument("thread count must be at least 1");
}

namespace {

// Runs fn(i) for i in [0, count) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = count;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string tensor_key(const std::string& prefix, const std::string& name) { return prefix + name; }

}  // namespace

double batch_gradient(const model::AirDde& model, std::span<const data::WindowSample* const> batch,
                      std::size_t threads, std::vector<Tensor>& grads) {
  if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  const auto& store = model.params();
  std::vector<double> losses(batch.size());
  std::vector<std::vector<Tensor>> per_sample(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t b) {
    ad::Tape tape;
    Bound p(tape, store);
    ad::Var loss = model.loss(p, *batch[b]);
    tape.backward(loss);
    losses[b] = loss.value()[0];
    per_sample[b] = p.gradients();
  });
  grads.clear();
  for (const auto& t : store.tensors()) grads.emplace_back(t.shape());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    total += losses[b];
    for (std::size_t k = 0; k < grads.size(); ++k) {
      auto dst = grads[k].values();
      auto src = per_sample[b][k].values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& g : grads)
    for (double& x : g.values()) x *= inv;
  return total * inv;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit index draw keeps the order library-independent.
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void TrainState::to_checkpoint(Checkpoint& ck, const ParamStore& layout) const {
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const auto& name = layout.names()[k];
    ck.tensors[tensor_key("adam.m.", name)] = adam.m.at(k);
    ck.tensors[tensor_key("adam.v.", name)] = adam.v.at(k);
    ck.tensors[tensor_key("best.", name)] = best_params.at(k);
  }
  ck.meta["train.adam_step"] = std::to_string(adam.step);
  ck.meta["train.epochs_done"] = std::to_string(epochs_done);
  ck.meta["train.bad_epochs"] = std::to_string(bad_epochs);
  ck.meta["train.best_epoch"] = std::to_string(best_epoch);
  ck.meta["train.stopped"] = stopped ? "true" : "false";
  ck.tensors["train.best_val_mae"] = Tensor::scalar(best_val_mae);
  if (!curve.empty()) {
    Tensor c({curve.size(), 4});
    for (std::size_t e = 0; e < curve.size(); ++e) {
      c(e, 0) = static_cast<double>(curve[e].epoch);
      c(e, 1) = curve[e].train_loss;
      c(e, 2) = curve[e].val_mae;
      c(e, 3) = curve[e].improved ? 1.0 : 0.0;
    }
    ck.tensors["train.curve"] = c;
  }
}

TrainState TrainState::from_checkpoint(const Checkpoint& ck, const ParamStore& layout) {
  auto tensor = [&](const std::string& key) -> const Tensor& {
    auto it = ck.tensors.find(key);
    if (it == ck.tensors.end()) throw std::runtime_error("resume checkpoint is missing '" + key + "'");
    return it->second;
  };
  auto meta = [&](const std::string& key) -> std::size_t {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw std::runtime_error("resume checkpoint is missing '" + key + "'");
    return static_cast<std::size_t>(std::stoull(it->second));
  };
  TrainState s;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const auto& name = layout.names()[k];
    for (const auto* prefix : {"adam.m.", "adam.v.", "best."}) {
      const Tensor& t = tensor(tensor_key(prefix, name));
      if (t.shape() != layout.tensors()[k].shape()) {
        throw std::runtime_error("resume checkpoint tensor '" + tensor_key(prefix, name) + "' has the wrong shape");
      }
    }
    s.adam.m.push_back(tensor(tensor_key("adam.m.", name)));
    s.adam.v.push_back(tensor(tensor_key("adam.v.", name)));
    s.best_params.push_back(tensor(tensor_key("best.", name)));
  }
  s.adam.step = meta("train.adam_step");
  s.epochs_done = meta("train.epochs_done");
  s.bad_epochs = meta("train.bad_epochs");
  s.best_epoch = meta("train.best_epoch");
  auto stopped = ck.meta.find("train.stopped");
  s.stopped = stopped != ck.meta.end() && stopped->second == "true";
  s.best_val_mae = tensor("train.best_val_mae")[0];
  auto curve = ck.tensors.find("train.curve");
  if (curve != ck.tensors.end()) {
    const Tensor& c = curve->second;
    for (std::size_t e = 0; e < c.rows(); ++e) {
      s.curve.push_back(EpochRecord{static_cast<std::size_t>(c(e, 0)), c(e, 1), c(e, 2), c(e, 3) != 0.0});
    }
  }
  return s;
}

TrainState train_loop(model::AirDde& model, const std::vector<data::WindowSample>& train,
                      const std::vector<data::WindowSample>& val, const TrainConfig& config, const TrainHooks& hooks,
                      std::optional<TrainState> resume) {
  config.validate();
  if (train.empty() || val.empty()) throw std::invalid_argument("training needs non-empty train and validation windows");
  auto& params = model.params().tensors();
  TrainState state;
  if (resume) {
    state = std::move(*resume);
    if (state.adam.m.size() != params.size() || state.best_params.size() != params.size()) {
      throw std::invalid_argument("resume state does not match the model parameters");
    }
  } else {
    state.adam = AdamState::zeros(params);
    state.best_val_mae = std::numeric_limits<double>::infinity();
    state.best_params = params;
  }

  std::vector<Tensor> grads;
  std::vector<const data::WindowSample*> batch;
  for (std::size_t epoch = state.epochs_done + 1; epoch <= config.max_epochs && !state.stopped; ++epoch) {
    const auto order = epoch_order(train.size(), config.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0, b = 0; b0 < order.size(); b0 += config.batch_size, ++b) {
      batch.clear();
      for (std::size_t k = b0; k < std::min(order.size(), b0 + config.batch_size); ++k) batch.push_back(&train[order[k]]);
      const double loss = batch_gradient(model, batch, config.threads, grads);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << b;
        throw std::runtime_error(msg.str());
      }
      if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& g : grads)
          for (double x : g.values()) sq += x * x;
        const double norm = std::sqrt(sq);
        if (norm > config.clip_norm) {
          for (auto& g : grads)
            for (double& x : g.values()) x *= config.clip_norm / norm;
        }
      }
      adam_step(params, grads, state.adam, config.adam);
      loss_sum += loss * static_cast<double>(batch.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.val_mae = evaluate_model(model, val, config.threads).mae;
    if (hooks.val_override) rec.val_mae = hooks.val_override(epoch, rec.val_mae);
    rec.improved = rec.val_mae < state.best_val_mae;
    if (rec.improved) {
      state.best_val_mae = rec.val_mae;
      state.best_epoch = epoch;
      state.best_params = params;
      state.bad_epochs = 0;
    } else {
      ++state.bad_epochs;
    }
    state.curve.push_back(rec);
    state.epochs_done = epoch;
    if (state.bad_epochs >= config.patience) state.stopped = true;
    log::info("epoch " + std::to_string(epoch) + " train_loss " + std::to_string(rec.train_loss) + " val_mae " +
              std::to_string(rec.val_mae) + (rec.improved ? " *" : ""));
    if (hooks.on_epoch) hooks.on_epoch(state, model);
  }
  params = state.best_params;
  return state;
}

void MetricAccumulator::Sums::add(double pred, double target) {
  const double e = pred - target;
  abs += std::abs(e);
  sq += e * e;
  ++n;
  if (std::abs(target) > kEpsMape) {
    ape += std::abs(e) / std::abs(target);
    ++n_ape;
  }
  const double denom = std::abs(target) + std::abs(pred);
  if (denom > kEpsMape) {
    sape += 2.0 * std::abs(e) / denom;
    ++n_sape;
  }
}

Metrics MetricAccumulator::Sums::metrics() const {
  if (n == 0) throw std::invalid_argument("metrics over an empty set");
  Metrics m;
  m.count = n;
  m.mae = abs / static_cast<double>(n);
  m.rmse = std::sqrt(sq / static_cast<double>(n));
  m.mape = n_ape ? 100.0 * ape / static_cast<double>(n_ape) : 0.0;
  m.smape = n_sape ? sape / static_cast<double>(n_sape) : 0.0;
  return m;
}

MetricAccumulator::MetricAccumulator(std::size_t horizon, std::size_t steps_per_day)
    : horizon_(horizon), steps_per_day_(std::max<std::size_t>(1, steps_per_day)) {
  if (horizon_ < 1) throw std::invalid_argument("metric horizon must be positive");
  days_.resize((horizon_ + steps_per_day_ - 1) / steps_per_day_);
}

void MetricAccumulator::add(const Tensor& preds, const Tensor& targets) {
  if (preds.shape() != targets.shape() || preds.rank() != 2 || preds.cols() != horizon_) {
    throw ShapeError("metrics: predictions " + shape_to_string(preds.shape()) + " vs targets " +
                     shape_to_string(targets.shape()));
  }
  for (std::size_t i = 0; i < preds.rows(); ++i) {
    for (std::size_t k = 0; k < horizon_; ++k) {
      all_.add(preds(i, k), targets(i, k));
      days_[k / steps_per_day_].add(preds(i, k), targets(i, k));
    }
  }
}

Metrics MetricAccumulator::overall() const { return all_.metrics(); }

std::vector<Metrics> MetricAccumulator::by_day() const {
  std::vector<Metrics> out;
  for (const auto& d : days_) out.push_back(d.metrics());
  return out;
}

Metrics evaluate(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw std::invalid_argument("evaluate: prediction and target sizes differ");
  if (preds.empty()) throw std::invalid_argument("evaluate: empty inputs");
  MetricAccumulator acc(preds.size(), preds.size());
  acc.add(Tensor({1, preds.size()}, std::vector<double>(preds.begin(), preds.end())),
          Tensor({1, targets.size()}, std::vector<double>(targets.begin(), targets.end())));
  return acc.overall();
}

Metrics evaluate_model(const model::AirDde& model, const std::vector<data::WindowSample>& windows,
                       std::size_t threads, MetricAccumulator* acc) {
  if (windows.empty()) throw std::invalid_argument("evaluate_model: no windows");
  std::vector<Tensor> preds(windows.size());
  parallel_for(windows.size(), threads, [&](std::size_t w) { preds[w] = model.forecast(windows[w]); });
  MetricAccumulator local(windows.front().horizon(), windows.front().horizon());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    local.add(preds[w], windows[w].targets);
    if (acc) acc->add(preds[w], windows[w].targets);
  }
  return local.overall();
}

Metrics evaluate_persistence(const std::vector<data::WindowSample>& windows, MetricAccumulator* acc) {
  if (windows.empty()) throw std::invalid_argument("evaluate_persistence: no windows");
  MetricAccumulator local(windows.front().horizon(), windows.front().horizon());
  for (const auto& w : windows) {
    const Tensor p = oracle::persistence_forecast(w);
    local.add(p, w.targets);
    if (acc) acc->add(p, w.targets);
  }
  return local.overall();
}

}  // namespace airdde::train
