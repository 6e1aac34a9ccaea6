#include "airdde/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace airdde::ad {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::add_row_bias: return "add_row_bias";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul_elementwise";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::masked_softmax_rows: return "masked_softmax_rows";
    case OpKind::concat_cols: return "concat_last_dim";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::transpose: return "transpose";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::square: return "square";
    case OpKind::abs: return "abs";
    case OpKind::clamp_max: return "clamp_max";
    case OpKind::lincomb: return "lincomb";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("value() on an unbound Var");
  return tape_->value(*this);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{OpKind::leaf, requires_grad, std::move(value), {}, {}, {}});
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw std::invalid_argument("node is not on this tape");
}

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(Var v) const {
  check_owner(v);
  return nodes_[v.id()].requires_grad;
}

OpKind Tape::kind(Var v) const {
  check_owner(v);
  return nodes_[v.id()].kind;
}

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, std::vector<double> aux,
                 std::vector<std::size_t> iaux) {
  bool needs = false;
  for (auto id : inputs) needs = needs || nodes_[id].requires_grad;
  nodes_.push_back(Node{kind, needs, std::move(value), std::move(inputs), std::move(aux), std::move(iaux)});
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_slot(std::size_t id) {
  auto& slot = grads_[id];
  if (slot.empty()) slot.assign(nodes_[id].value.numel(), 0.0);
  return slot;
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (backward_done_) throw std::logic_error("backward already ran on this tape; record a new forward pass");
  if (nodes_[loss.id()].value.numel() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " +
                                shape_to_string(nodes_[loss.id()].value.shape()));
  }
  backward_done_ = true;
  grads_.assign(nodes_.size(), {});
  if (!nodes_[loss.id()].requires_grad) return;
  grads_[loss.id()].assign(1, 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (grads_[id].empty() || nodes_[id].kind == OpKind::leaf) continue;
    propagate(id);
  }
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  const auto& node = nodes_[v.id()];
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return Tensor(node.value.shape(), grads_[v.id()]);
  return Tensor(node.value.shape());
}

void Tape::propagate(std::size_t id) {
  const Node& node = nodes_[id];
  const std::vector<double>& g = grads_[id];
  const Tensor& out = node.value;
  auto wants = [&](std::size_t k) { return nodes_[node.inputs[k]].requires_grad; };
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };

  switch (node.kind) {
    case OpKind::leaf:
      break;
    case OpKind::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      const double* gp = g.data();
      if (wants(0)) {
        // dA = G B^T, accumulated row by row over B^T for contiguous access.
        const Tensor bt = transpose_values(b);
        const double* btp = bt.raw().data();
        double* ga = grad_slot(node.inputs[0]).data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = gp[i * n + j];
            if (gij == 0.0) continue;
            const double* brow = btp + j * k;
            double* arow = ga + i * k;
            for (std::size_t p = 0; p < k; ++p) arow[p] += gij * brow[p];
          }
      }
      if (wants(1)) {
        const double* ap = a.raw().data();
        double* gb = grad_slot(node.inputs[1]).data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = ap[i * k + p];
            if (aip == 0.0) continue;
            const double* grow = gp + i * n;
            double* brow = gb + p * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
          }
      }
      break;
    }
    case OpKind::add:
    case OpKind::sub: {
      const double sign = node.kind == OpKind::sub ? -1.0 : 1.0;
      if (wants(0)) {
        auto& ga = grad_slot(node.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto& gb = grad_slot(node.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
      }
      break;
    }
    case OpKind::add_row_bias: {
      const std::size_t cols = out.cols();
      if (wants(0)) {
        auto& ga = grad_slot(node.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto& gb = grad_slot(node.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
      }
      break;
    }
    case OpKind::mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (wants(0)) {
        auto& ga = grad_slot(node.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto& gb = grad_slot(node.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
      break;
    }
    case OpKind::scale: {
      auto& ga = grad_slot(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += node.aux[0] * g[i];
      break;
    }
    case OpKind::add_scalar: {
      auto& ga = grad_slot(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case OpKind::relu: {
      const Tensor& a = in(0);
      auto& ga = grad_slot(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a[i] > 0.0) ga[i] += g[i];
      break;
    }
    case OpKind::sigmoid: {
      auto& ga = grad_slot(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out[i] * (1.0 - out[i]);
      break;
    }
    case OpKind::tanh: {
      auto& ga = grad_slot(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - out[i] * out[i]);
      break;
    }
    case OpKind::softmax_rows:
    case OpKind::masked_softmax_rows: {
      auto& ga = grad_slot(node.inputs[0]);
      const std::size_t rows = out.rows(), cols = out.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * out[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += out[r * cols + c] * (g[r * cols + c] - dot);
      }
      break;
    }
    case OpKind::concat_cols: {
      const std::size_t rows = out.rows(), total = out.cols();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t width = node.iaux[k];
        if (wants(k)) {
          auto& gk = grad_slot(node.inputs[k]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < width; ++c) gk[r * width + c] += g[r * total + offset + c];
        }
        offset += width;
      }
      break;
    }
    case OpKind::concat_rows: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t n = in(k).numel();
        if (wants(k)) {
          auto& gk = grad_slot(node.inputs[k]);
          for (std::size_t i = 0; i < n; ++i) gk[i] += g[offset + i];
        }
        offset += n;
      }
      break;
    }
    case OpKind::slice_rows: {
      auto& ga = grad_slot(node.inputs[0]);
      const std::size_t cols = in(0).cols();
      const std::size_t begin = node.iaux[0];
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
      break;
    }
    case OpKind::slice_cols: {
      auto& ga = grad_slot(node.inputs[0]);
      const std::size_t cols = in(0).cols(), begin = node.iaux[0], width = out.cols();
      for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < width; ++c) ga[r * cols + begin + c] += g[r * width + c];
      break;
    }
    case OpKind::gather_rows: {
      auto& ga = grad_slot(node.inputs[0]);
      const std::size_t cols = out.cols();
      for (std::size_t r = 0; r < node.iaux.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) ga[node.iaux[r] * cols + c] += g[r * cols + c];
      break;
    }
    case OpKind::transpose: {
      auto& ga = grad_slot(node.inputs[0]);
      const std::size_t rows = out.rows(), cols = out.cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ga[c * rows + r] += g[r * cols + c];
      break;
    }
    case OpKind::sum:
    case OpKind::mean: {
      auto& ga = grad_slot(node.inputs[0]);
      const double w = node.kind == OpKind::mean ? g[0] / static_cast<double>(ga.size()) : g[0];
      for (auto& v : ga) v += w;
      break;
    }
    case OpKind::square: {
      const Tensor& a = in(0);
      auto& ga = grad_slot(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * a[i] * g[i];
      break;
    }
    case OpKind::abs: {
      const Tensor& a = in(0);
      auto& ga = grad_slot(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a[i] > 0.0) ga[i] += g[i];
        else if (a[i] < 0.0) ga[i] -= g[i];
      }
      break;
    }
    case OpKind::clamp_max: {
      const Tensor& a = in(0);
      auto& ga = grad_slot(node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a[i] < node.aux[0]) ga[i] += g[i];
      break;
    }
    case OpKind::lincomb: {
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        if (!wants(k)) continue;
        auto& gk = grad_slot(node.inputs[k]);
        const double c = node.aux[k];
        for (std::size_t i = 0; i < g.size(); ++i) gk[i] += c * g[i];
      }
      break;
    }
  }
}

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape() || !a.valid()) throw std::invalid_argument("operands live on different tapes");
  return *a.tape();
}

[[noreturn]] void mismatch(const char* kind, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(kind) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                   shape_to_string(b.shape()));
}

void require_matrix(const char* kind, const Tensor& a) {
  if (a.rank() != 2) throw ShapeError(std::string(kind) + ": expected a matrix, got " + shape_to_string(a.shape()));
}

template <typename F>
Var unary(Var a, OpKind kind, F&& fn, std::vector<double> aux = {}) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fn(x[i]);
  return tape.record(kind, std::move(out), {a.id()}, std::move(aux));
}

template <typename F>
Var elementwise(Var a, Var b, OpKind kind, F&& fn) {
  Tape& tape = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) mismatch(op_name(kind), x, y);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fn(x[i], y[i]);
  return tape.record(kind, std::move(out), {a.id(), b.id()});
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows()) mismatch("matmul", x, y);
  return tape.record(OpKind::matmul, matmul_values(x, y), {a.id(), b.id()});
}

Var add(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() == y.shape()) return elementwise(a, b, OpKind::add, [](double p, double q) { return p + q; });
  const bool bias_shape = x.rank() == 2 && ((y.rank() == 2 && y.rows() == 1) || y.rank() == 1) &&
                          y.cols() == x.cols();
  if (!bias_shape) mismatch("add", x, y);
  Tape& tape = tape_of(a, b);
  Tensor out = x;
  const std::size_t cols = x.cols();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += y[i % cols];
  return tape.record(OpKind::add_row_bias, std::move(out), {a.id(), b.id()});
}

Var sub(Var a, Var b) { return elementwise(a, b, OpKind::sub, [](double p, double q) { return p - q; }); }
Var mul(Var a, Var b) { return elementwise(a, b, OpKind::mul, [](double p, double q) { return p * q; }); }

Var scale(Var a, double factor) {
  return unary(a, OpKind::scale, [factor](double v) { return factor * v; }, {factor});
}

Var add_scalar(Var a, double offset) {
  return unary(a, OpKind::add_scalar, [offset](double v) { return v + offset; }, {offset});
}

Var relu(Var a) { return unary(a, OpKind::relu, [](double v) { return v > 0.0 ? v : 0.0; }); }
Var sigmoid(Var a) { return unary(a, OpKind::sigmoid, stable_sigmoid); }
Var tanh(Var a) { return unary(a, OpKind::tanh, [](double v) { return std::tanh(v); }); }
Var square(Var a) { return unary(a, OpKind::square, [](double v) { return v * v; }); }
Var abs(Var a) { return unary(a, OpKind::abs, [](double v) { return std::abs(v); }); }

Var clamp_max(Var a, double ceiling) {
  return unary(a, OpKind::clamp_max, [ceiling](double v) { return v < ceiling ? v : ceiling; }, {ceiling});
}

namespace {

Var softmax_impl(Var a, const Tensor* mask) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  require_matrix(mask ? "masked_softmax_rows" : "softmax_rows", x);
  if (mask && mask->shape() != x.shape()) mismatch("masked_softmax_rows", x, *mask);
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double peak = -INFINITY;
    for (std::size_t c = 0; c < cols; ++c)
      if (!mask || (*mask)(r, c) != 0.0) peak = std::max(peak, x(r, c));
    if (peak == -INFINITY) throw std::invalid_argument("masked_softmax_rows: row " + std::to_string(r) + " is fully masked");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask && (*mask)(r, c) == 0.0) continue;
      out(r, c) = std::exp(x(r, c) - peak);
      total += out(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) out(r, c) /= total;
  }
  return tape.record(mask ? OpKind::masked_softmax_rows : OpKind::softmax_rows, std::move(out), {a.id()});
}

}  // namespace

Var softmax_rows(Var a) { return softmax_impl(a, nullptr); }
Var masked_softmax_rows(Var a, const Tensor& mask) { return softmax_impl(a, &mask); }

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_last_dim: no inputs");
  Tape& tape = tape_of(parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    const Tensor& v = p.value();
    require_matrix("concat_last_dim", v);
    if (v.rows() != rows) mismatch("concat_last_dim", parts[0].value(), v);
    ids.push_back(p.id());
    widths.push_back(v.cols());
    total += v.cols();
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, offset + c) = v(r, c);
    offset += v.cols();
  }
  return tape.record(OpKind::concat_cols, std::move(out), std::move(ids), {}, std::move(widths));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& tape = tape_of(parts[0]);
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<double> data;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    const Tensor& v = p.value();
    require_matrix("concat_rows", v);
    if (v.cols() != cols) mismatch("concat_rows", parts[0].value(), v);
    ids.push_back(p.id());
    rows += v.rows();
    data.insert(data.end(), v.raw().begin(), v.raw().end());
  }
  return tape.record(OpKind::concat_rows, Tensor({rows, cols}, std::move(data)), std::move(ids));
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  require_matrix("slice", x);
  if (begin >= end || end > x.rows()) {
    throw ShapeError("slice: row range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_to_string(x.shape()));
  }
  const std::size_t cols = x.cols();
  std::vector<double> data(x.raw().begin() + begin * cols, x.raw().begin() + end * cols);
  return tape.record(OpKind::slice_rows, Tensor({end - begin, cols}, std::move(data)), {a.id()}, {}, {begin});
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  require_matrix("slice", x);
  if (begin >= end || end > x.cols()) {
    throw ShapeError("slice: column range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_to_string(x.shape()));
  }
  Tensor out({x.rows(), end - begin});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = x(r, c);
  return tape.record(OpKind::slice_cols, std::move(out), {a.id()}, {}, {begin});
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Tape& tape = tape_of(a);
  const Tensor& x = a.value();
  require_matrix("gather_rows", x);
  if (rows.empty()) throw ShapeError("gather_rows: empty row set");
  const std::size_t cols = x.cols();
  Tensor out({rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.rows()) throw ShapeError("gather_rows: row index out of range for " + shape_to_string(x.shape()));
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = x(rows[r], c);
  }
  return tape.record(OpKind::gather_rows, std::move(out), {a.id()}, {},
                     std::vector<std::size_t>(rows.begin(), rows.end()));
}

Var transpose(Var a) {
  Tape& tape = tape_of(a);
  return tape.record(OpKind::transpose, transpose_values(a.value()), {a.id()});
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return tape.record(OpKind::sum, Tensor::scalar(total), {a.id()});
}

Var mean(Var a) {
  Tape& tape = tape_of(a);
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return tape.record(OpKind::mean, Tensor::scalar(total / static_cast<double>(a.value().numel())), {a.id()});
}

Var lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) throw ShapeError("lincomb: terms and coefficients differ in count");
  Tape& tape = tape_of(terms[0]);
  const Tensor& first = terms[0].value();
  Tensor out(first.shape());
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    tape_of(terms[0], terms[k]);
    const Tensor& v = terms[k].value();
    if (v.shape() != first.shape()) mismatch("lincomb", first, v);
    const double c = coeffs[k];
    if (k == 0) {
      for (std::size_t i = 0; i < v.numel(); ++i) out[i] = c * v[i];
    } else {
      for (std::size_t i = 0; i < v.numel(); ++i) out[i] += c * v[i];
    }
    ids.push_back(terms[k].id());
  }
  return tape.record(OpKind::lincomb, std::move(out), std::move(ids),
                     std::vector<double>(coeffs.begin(), coeffs.end()));
}

double grad_check(const ScalarFn& f, const Tensor& point, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.leaf(point);
    Var y = f(tape, x);
    if (y.value().numel() != 1) {
      throw std::invalid_argument("grad_check: function output must be scalar, got " + shape_to_string(y.shape()));
    }
    tape.backward(y);
    analytic = tape.grad(x);
  }
  auto evaluate = [&](const Tensor& at) {
    Tape tape;
    Var x = tape.leaf(at, false);
    return f(tape, x).value()[0];
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    const double base = point[i];
    probe[i] = base + eps;
    const double up = evaluate(probe);
    probe[i] = base - eps;
    const double down = evaluate(probe);
    probe[i] = base;
    const double central = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

double stable_derivative(const std::function<double(double)>& f, double max_step, double min_step) {
  if (!(min_step > 0.0) || !(max_step >= min_step)) throw std::invalid_argument("stable_derivative: bad step range");
  std::vector<double> est;
  for (double h = max_step; h >= min_step * (1.0 - 1e-12); h /= 3.0) {
    est.push_back((8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h));
  }
  if (est.size() == 1) return est[0];
  std::size_t best = 0;
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < est.size(); ++k) {
    const double g = std::abs(est[k] - est[k + 1]);
    if (g < gap) {
      gap = g;
      best = k;
    }
  }
  return est[best];
}

}  // namespace airdde::ad
