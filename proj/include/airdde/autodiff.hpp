#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "airdde/tensor.hpp"

namespace airdde::ad {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  add,
  add_row_bias,
  sub,
  mul,
  scale,
  add_scalar,
  relu,
  sigmoid,
  tanh,
  softmax_rows,
  masked_softmax_rows,
  concat_cols,
  concat_rows,
  slice_rows,
  slice_cols,
  gather_rows,
  transpose,
  sum,
  mean,
  square,
  abs,
  clamp_max,
  lincomb,
};

const char* op_name(OpKind kind);

/// Reverse-mode record. Nodes are appended in evaluation order, so every
/// node's inputs precede it. A tape is single-threaded and supports exactly
/// one backward pass; build a fresh tape for the next forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  OpKind kind(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Populates gradients of `loss` with respect to every node that
  /// requires them. `loss` must hold exactly one element.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }

  /// Gradient of the last backward pass; zeros if the node was not reached.
  Tensor grad(Var v) const;

  // Used by the op constructors.
  Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, std::vector<double> aux = {},
             std::vector<std::size_t> iaux = {});

 private:
  struct Node {
    OpKind kind;
    bool requires_grad;
    Tensor value;
    std::vector<std::size_t> inputs;
    std::vector<double> aux;
    std::vector<std::size_t> iaux;
  };

  void check_owner(Var v) const;
  void propagate(std::size_t id);
  std::vector<double>& grad_slot(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool backward_done_ = false;
};

// Forward operations. Every call records its result with a gradient rule.
Var matmul(Var a, Var b);
/// Same-shape sum, or a [rows,cols] + [1,cols] bias broadcast.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var softmax_rows(Var a);
/// Row softmax restricted to entries whose mask value is non-zero; masked
/// entries receive exactly zero weight. Every row needs one unmasked entry.
Var masked_softmax_rows(Var a, const Tensor& mask);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var transpose(Var a);
Var sum(Var a);
Var mean(Var a);
Var square(Var a);
Var abs(Var a);
Var clamp_max(Var a, double ceiling);
/// sum_i coeffs[i] * terms[i], accumulated left to right.
Var lincomb(std::span<const Var> terms, std::span<const double> coeffs);

inline Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::span<const Var>(parts.begin(), parts.size())); }
inline Var concat_rows(std::initializer_list<Var> parts) { return concat_rows(std::span<const Var>(parts.begin(), parts.size())); }
inline Var lincomb(std::initializer_list<Var> terms, std::initializer_list<double> coeffs) {
  return lincomb(std::span<const Var>(terms.begin(), terms.size()), std::span<const double>(coeffs.begin(), coeffs.size()));
}

/// Scalar function of a single tensor argument, built on the given tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
double grad_check(const ScalarFn& f, const Tensor& point, double eps);

/// Five-point derivative at offset 0 of `f`, trying steps max_step, max_step/3,
/// ... down to min_step and keeping the estimate that agrees best with the
/// next smaller step.
double stable_derivative(const std::function<double(double)>& f, double max_step, double min_step);

}  // namespace airdde::ad
