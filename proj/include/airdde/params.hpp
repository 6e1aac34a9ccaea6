#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "airdde/autodiff.hpp"
#include "airdde/tensor.hpp"

namespace airdde {

using Rng = std::mt19937_64;

/// Index of a tensor inside a ParamStore.
struct ParamId {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const { return index != static_cast<std::size_t>(-1); }
};

/// Ordered collection of named trainable tensors. Names use dotted paths;
/// the first path component is the parameter group.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor init);
  /// Adds a tensor initialised uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  ParamId add_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng);

  Tensor& at(ParamId id) { return tensors_.at(id.index); }
  const Tensor& at(ParamId id) const { return tensors_.at(id.index); }
  const std::string& name(ParamId id) const { return names_.at(id.index); }
  ParamId find(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  std::size_t size() const { return tensors_.size(); }
  std::size_t total_elements() const;
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& tensors() { return tensors_; }

  /// Distinct groups in insertion order.
  std::vector<std::string> groups() const;
  static std::string group_of(std::string_view name);

  bool same_layout(const ParamStore& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Parameters recorded as leaves on one tape.
class Bound {
 public:
  Bound(ad::Tape& tape, const ParamStore& store, bool requires_grad = true);

  ad::Var operator[](ParamId id) const { return vars_.at(id.index); }
  ad::Tape& tape() const { return *tape_; }
  const ParamStore& store() const { return *store_; }

  /// Gradients after backward, aligned with the store.
  std::vector<Tensor> gradients() const;

 private:
  ad::Tape* tape_;
  const ParamStore* store_;
  std::vector<ad::Var> vars_;
};

struct GroupGradCheck {
  std::string group;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Finite-difference check of d loss / d params, reported per group. Each
/// coordinate uses stable_derivative over steps in [eps, max_step].
/// `max_coords_per_tensor` = 0 checks every coordinate; otherwise a seeded
/// subset of each tensor is probed.
std::vector<GroupGradCheck> check_parameter_gradients(const std::function<ad::Var(const Bound&)>& loss,
                                                      ParamStore& params, double eps = 1e-5,
                                                      double max_step = 0.1,
                                                      std::size_t max_coords_per_tensor = 0,
                                                      std::uint64_t seed = 0);

}  // namespace airdde
