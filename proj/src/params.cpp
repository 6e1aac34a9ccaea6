#include "airdde/params.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace airdde {

ParamId ParamStore::add(std::string name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(init));
  return ParamId{tensors_.size() - 1};
}

ParamId ParamStore::add_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return add(std::move(name), std::move(t));
}

ParamId ParamStore::find(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return ParamId{};
  return ParamId{it->second};
}

Tensor& ParamStore::at(std::string_view name) {
  auto id = find(name);
  if (!id.valid()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return tensors_[id.index];
}

const Tensor& ParamStore::at(std::string_view name) const {
  auto id = find(name);
  if (!id.valid()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return tensors_[id.index];
}

std::size_t ParamStore::total_elements() const {
  return std::accumulate(tensors_.begin(), tensors_.end(), std::size_t{0},
                         [](std::size_t acc, const Tensor& t) { return acc + t.numel(); });
}

std::string ParamStore::group_of(std::string_view name) {
  return std::string(name.substr(0, name.find('.')));
}

std::vector<std::string> ParamStore::groups() const {
  std::vector<std::string> out;
  for (const auto& n : names_) {
    auto g = group_of(n);
    if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
  }
  return out;
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
  return true;
}

Bound::Bound(ad::Tape& tape, const ParamStore& store, bool requires_grad) : tape_(&tape), store_(&store) {
  vars_.reserve(store.size());
  for (const auto& t : store.tensors()) vars_.push_back(tape.leaf(t, requires_grad));
}

std::vector<Tensor> Bound::gradients() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const auto& v : vars_) out.push_back(tape_->grad(v));
  return out;
}

std::vector<GroupGradCheck> check_parameter_gradients(const std::function<ad::Var(const Bound&)>& loss,
                                                      ParamStore& params, double eps, double max_step,
                                                      std::size_t max_coords_per_tensor, std::uint64_t seed) {
  if (!(eps > 0.0) || !(max_step >= eps)) throw std::invalid_argument("gradient check: need 0 < eps <= max_step");
  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    Bound bound(tape, params);
    ad::Var y = loss(bound);
    if (y.value().numel() != 1) throw std::invalid_argument("gradient check: loss must be scalar");
    tape.backward(y);
    analytic = bound.gradients();
  }
  auto evaluate = [&]() {
    ad::Tape tape;
    Bound bound(tape, params, false);
    return loss(bound).value()[0];
  };

  Rng rng(seed);
  std::vector<GroupGradCheck> report;
  for (const auto& group : params.groups()) report.push_back({group, 0.0, 0});

  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& tensor = params.tensors()[p];
    std::vector<std::size_t> coords(tensor.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_tensor > 0 && coords.size() > max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    auto& entry = *std::find_if(report.begin(), report.end(), [&](const GroupGradCheck& g) {
      return g.group == ParamStore::group_of(params.names()[p]);
    });
    for (std::size_t i : coords) {
      const double base = tensor[i];
      const double central = ad::stable_derivative(
          [&](double h) {
            tensor[i] = base + h;
            const double v = evaluate();
            tensor[i] = base;
            return v;
          },
          max_step, eps);
      const double a = analytic[p][i];
      const double err = std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-12);
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      ++entry.coordinates;
    }
  }
  return report;
}

}  // namespace airdde
