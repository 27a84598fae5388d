#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rnode/errors.hpp"

namespace rnode {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first touched, then data-sized
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense double tensor participating in reverse-mode differentiation.
// A Tensor is a cheap handle; copies alias the same storage. Use clone()
// for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(detail::shape_numel(impl->shape), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false) {
    if (detail::shape_numel(shape) != data.size()) {
      throw ShapeError("from_data: shape " + detail::shape_str(shape) +
                       " does not hold " + std::to_string(data.size()) +
                       " values");
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  // A single-row matrix (1 x n).
  static Tensor row(std::vector<double> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return from_data({1, n}, std::move(values), requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  // Rank-2 helpers.
  std::size_t rows() const { return impl_->shape.at(0); }
  std::size_t cols() const { return impl_->shape.at(1); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }

  double value() const {
    if (numel() != 1) {
      throw ContractError("value(): tensor " + detail::shape_str(shape()) +
                          " is not scalar");
    }
    return impl_->data[0];
  }

  double at(std::size_t r, std::size_t c) const {
    return impl_->data[r * cols() + c];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  // Gradient buffer; allocated (zero) on first access.
  std::span<const double> grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }
  std::span<double> mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }

  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  // Deep copy detached from any recorded computation.
  Tensor clone() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = impl_->requires_grad;
    return Tensor(std::move(impl));
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

inline bool& grad_mode_flag() {
  static thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Scoped switch that stops operations from being recorded; forward passes
// made under this guard are invisible to backward().
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Thread-confined record of primitive operations in execution order.
// Replaying the nodes in reverse applies the chain rule exactly for the
// recorded computation.
class Tape {
 public:
  static Tape& active() {
    static thread_local Tape tape;
    return tape;
  }

  void record(std::shared_ptr<detail::TensorImpl> out,
              std::function<void()> pull) {
    nodes_.push_back({std::move(out), std::move(pull)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Reverse sweep from `loss`. Intermediate gradients are reset on every
  // call while leaf gradients accumulate, so repeated backward() calls sum.
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward: loss must be a scalar tensor");
    }
    if (nodes_.empty()) {
      throw ContractError("backward: tape is empty");
    }
    for (auto& n : nodes_) {
      n.out->ensure_grad();
      std::fill(n.out->grad.begin(), n.out->grad.end(), 0.0);
    }
    auto impl = loss.impl();
    impl->ensure_grad();
    impl->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->pull();
    }
  }

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> out;
    std::function<void()> pull;
  };
  std::vector<Node> nodes_;
};

inline void backward(const Tensor& loss) { Tape::active().backward(loss); }

inline void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

inline void zero_grads(std::vector<Tensor>& params) {
  zero_grads(std::span<Tensor>(params));
}

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

enum class Primitive {
  Add,
  Sub,
  Mul,
  MatMul,
  Tanh,
  Sigmoid,
  Relu,
  Softmax,
  Log,
  Concat,
  Slice,
  Sum,
  Mean,
  Scale,
};

inline const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::Add: return "add";
    case Primitive::Sub: return "sub";
    case Primitive::Mul: return "mul";
    case Primitive::MatMul: return "matmul";
    case Primitive::Tanh: return "tanh";
    case Primitive::Sigmoid: return "sigmoid";
    case Primitive::Relu: return "relu";
    case Primitive::Softmax: return "softmax";
    case Primitive::Log: return "log";
    case Primitive::Concat: return "concat";
    case Primitive::Slice: return "slice";
    case Primitive::Sum: return "sum";
    case Primitive::Mean: return "mean";
    case Primitive::Scale: return "scale";
  }
  return "?";
}

namespace detail {

inline Tensor make_output(Shape shape, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(requires_grad && grad_mode_flag());
  return t;
}

inline void record_if_needed(const Tensor& out, std::function<void()> pull) {
  if (out.requires_grad()) {
    Tape::active().record(out.impl(), std::move(pull));
  }
}

[[noreturn]] inline void throw_shape(const char* op, const Tensor& a,
                                     const Tensor& b) {
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()) + " do not conform");
}

enum class BinOp { Add, Sub, Mul };

inline Tensor binary_elementwise(BinOp kind, const Tensor& a, const Tensor& b) {
  const char* name = kind == BinOp::Add   ? "add"
                     : kind == BinOp::Sub ? "sub"
                                          : "mul";
  const bool same = a.shape() == b.shape();
  // add/sub also accept a rank-1 row vector broadcast over a matrix's rows
  // (bias addition); mul is strict.
  const bool rowcast = !same && kind != BinOp::Mul && a.ndim() == 2 &&
                       b.ndim() == 1 && b.numel() == a.shape()[1];
  if (!same && !rowcast) throw_shape(name, a, b);

  const std::size_t n = a.numel();
  const std::size_t w = rowcast ? b.numel() : 0;
  Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
  auto od = out.mutable_data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double bv = rowcast ? bd[i % w] : bd[i];
    switch (kind) {
      case BinOp::Add: od[i] = ad[i] + bv; break;
      case BinOp::Sub: od[i] = ad[i] - bv; break;
      case BinOp::Mul: od[i] = ad[i] * bv; break;
    }
  }
  record_if_needed(out, [kind, rowcast, w, ai = a.impl(), bi = b.impl(),
                         oi = out.impl()]() {
    const std::size_t n = oi->data.size();
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = oi->grad[i];
        ai->grad[i] += kind == BinOp::Mul
                           ? g * (rowcast ? bi->data[i % w] : bi->data[i])
                           : g;
      }
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = oi->grad[i];
        const std::size_t j = rowcast ? i % w : i;
        switch (kind) {
          case BinOp::Add: bi->grad[j] += g; break;
          case BinOp::Sub: bi->grad[j] -= g; break;
          case BinOp::Mul: bi->grad[j] += g * ai->data[i]; break;
        }
      }
    }
  });
  return out;
}

template <typename Fwd, typename Dfdy>
inline Tensor unary_from_output(const char* /*name*/, const Tensor& a, Fwd f,
                                Dfdy dfdy) {
  // dfdy receives the op's *output* value (tanh/sigmoid style rules).
  Tensor out = make_output(a.shape(), a.requires_grad());
  auto od = out.mutable_data();
  auto ad = a.data();
  for (std::size_t i = 0; i < ad.size(); ++i) od[i] = f(ad[i]);
  record_if_needed(out, [dfdy, ai = a.impl(), oi = out.impl()]() {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < oi->data.size(); ++i) {
      ai->grad[i] += oi->grad[i] * dfdy(oi->data[i], ai->data[i]);
    }
  });
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(detail::BinOp::Add, a, b);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(detail::BinOp::Sub, a, b);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(detail::BinOp::Mul, a, b);
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
    detail::throw_shape("matmul", a, b);
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out =
      detail::make_output({m, n}, a.requires_grad() || b.requires_grad());
  auto od = out.mutable_data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        od[i * n + j] += av * bd[p * n + j];
      }
    }
  }
  detail::record_if_needed(out, [m, k, n, ai = a.impl(), bi = b.impl(),
                                 oi = out.impl()]() {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            acc += oi->grad[i * n + j] * bi->data[p * n + j];
          }
          ai->grad[i * k + p] += acc;
        }
      }
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < m; ++i) {
          const double av = ai->data[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) {
            bi->grad[p * n + j] += av * oi->grad[i * n + j];
          }
        }
      }
    }
  });
  return out;
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary_from_output(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double y, double) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_from_output(
      "sigmoid", a,
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double y, double) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary_from_output(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double, double x) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary_from_output(
      "log", a, [](double x) { return std::log(x); },
      [](double, double x) { return 1.0 / x; });
}

// Row-wise softmax over the last axis; rank-1 input is one row.
inline Tensor softmax(const Tensor& a) {
  if (a.ndim() != 1 && a.ndim() != 2) {
    throw ShapeError("softmax: expected rank 1 or 2, got " +
                     detail::shape_str(a.shape()));
  }
  const std::size_t w = a.ndim() == 2 ? a.cols() : a.numel();
  const std::size_t r = a.numel() / w;
  Tensor out = detail::make_output(a.shape(), a.requires_grad());
  auto od = out.mutable_data();
  auto ad = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = ad.data() + i * w;
    double* y = od.data() + i * w;
    double mx = x[0];
    for (std::size_t j = 1; j < w; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < w; ++j) y[j] /= s;
  }
  detail::record_if_needed(out, [r, w, ai = a.impl(), oi = out.impl()]() {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = oi->data.data() + i * w;
      const double* gy = oi->grad.data() + i * w;
      double dot = 0.0;
      for (std::size_t j = 0; j < w; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < w; ++j) {
        ai->grad[i * w + j] += y[j] * (gy[j] - dot);
      }
    }
  });
  return out;
}

// Concatenate rank-2 tensors along `axis` (0 stacks rows, 1 widens rows).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ContractError("concat: axis must be 0 or 1");
  for (const auto& p : parts) {
    if (p.ndim() != 2) {
      throw ShapeError("concat: expected rank-2 inputs, got " +
                       detail::shape_str(p.shape()));
    }
  }
  const std::size_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const std::size_t f = axis == 0 ? p.cols() : p.rows();
    if (f != fixed) detail::throw_shape("concat", parts[0], p);
    total += axis == 0 ? p.rows() : p.cols();
    rg = rg || p.requires_grad();
  }
  const Shape oshape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  Tensor out = detail::make_output(oshape, rg);
  auto od = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    auto pd = p.data();
    if (axis == 0) {
      std::copy(pd.begin(), pd.end(), od.begin() + offset * fixed);
      offset += p.rows();
    } else {
      const std::size_t w = p.cols(), ow = total;
      for (std::size_t i = 0; i < fixed; ++i) {
        std::copy(pd.begin() + i * w, pd.begin() + (i + 1) * w,
                  od.begin() + i * ow + offset);
      }
      offset += w;
    }
  }
  std::vector<std::shared_ptr<detail::TensorImpl>> impls;
  impls.reserve(parts.size());
  for (const auto& p : parts) impls.push_back(p.impl());
  detail::record_if_needed(out, [axis, fixed, total, impls,
                                 oi = out.impl()]() {
    std::size_t offset = 0;
    for (const auto& pi : impls) {
      const std::size_t pr = pi->shape[0], pc = pi->shape[1];
      if (pi->requires_grad) {
        pi->ensure_grad();
        if (axis == 0) {
          for (std::size_t i = 0; i < pr * pc; ++i) {
            pi->grad[i] += oi->grad[offset * fixed + i];
          }
        } else {
          for (std::size_t i = 0; i < fixed; ++i) {
            for (std::size_t j = 0; j < pc; ++j) {
              pi->grad[i * pc + j] += oi->grad[i * total + offset + j];
            }
          }
        }
      }
      offset += axis == 0 ? pr : pc;
    }
  });
  return out;
}

inline Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  return concat(std::vector<Tensor>{a, b}, axis);
}

// Contiguous [lo, hi) range of rows (axis 0) or columns (axis 1).
inline Tensor slice(const Tensor& a, int axis, std::size_t lo, std::size_t hi) {
  if (a.ndim() != 2) {
    throw ShapeError("slice: expected rank-2 input, got " +
                     detail::shape_str(a.shape()));
  }
  if (axis != 0 && axis != 1) throw ContractError("slice: axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? a.rows() : a.cols();
  if (lo >= hi || hi > extent) {
    throw ContractError("slice: range [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + ") out of bounds for extent " +
                        std::to_string(extent));
  }
  const std::size_t r = a.rows(), c = a.cols();
  const Shape oshape = axis == 0 ? Shape{hi - lo, c} : Shape{r, hi - lo};
  Tensor out = detail::make_output(oshape, a.requires_grad());
  auto od = out.mutable_data();
  auto ad = a.data();
  if (axis == 0) {
    std::copy(ad.begin() + lo * c, ad.begin() + hi * c, od.begin());
  } else {
    for (std::size_t i = 0; i < r; ++i) {
      std::copy(ad.begin() + i * c + lo, ad.begin() + i * c + hi,
                od.begin() + i * (hi - lo));
    }
  }
  detail::record_if_needed(out, [axis, lo, hi, r, c, ai = a.impl(),
                                 oi = out.impl()]() {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    if (axis == 0) {
      for (std::size_t i = 0; i < (hi - lo) * c; ++i) {
        ai->grad[lo * c + i] += oi->grad[i];
      }
    } else {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = lo; j < hi; ++j) {
          ai->grad[i * c + j] += oi->grad[i * (hi - lo) + (j - lo)];
        }
      }
    }
  });
  return out;
}

inline Tensor sum(const Tensor& a) {
  Tensor out = detail::make_output({1}, a.requires_grad());
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.mutable_data()[0] = s;
  detail::record_if_needed(out, [ai = a.impl(), oi = out.impl()]() {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    const double g = oi->grad[0];
    for (auto& gv : ai->grad) gv += g;
  });
  return out;
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  Tensor out = detail::make_output({1}, a.requires_grad());
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.mutable_data()[0] = s * inv;
  detail::record_if_needed(out, [inv, ai = a.impl(), oi = out.impl()]() {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    const double g = oi->grad[0] * inv;
    for (auto& gv : ai->grad) gv += g;
  });
  return out;
}

// Multiply by a plain constant (the constant is not differentiated).
inline Tensor scale(const Tensor& a, double factor) {
  Tensor out = detail::make_output(a.shape(), a.requires_grad());
  auto od = out.mutable_data();
  auto ad = a.data();
  for (std::size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] * factor;
  detail::record_if_needed(out, [factor, ai = a.impl(), oi = out.impl()]() {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < oi->data.size(); ++i) {
      ai->grad[i] += oi->grad[i] * factor;
    }
  });
  return out;
}

// Extra attributes for primitives that take more than tensor inputs.
struct PrimitiveAttrs {
  int axis = 1;               // Concat / Slice
  std::size_t lo = 0, hi = 0; // Slice
  double factor = 1.0;        // Scale
};

// Uniform dispatch over the primitive set. Named functions above are the
// ergonomic API; this entry point keeps the op menu enumerable.
inline Tensor apply_primitive(Primitive kind, const std::vector<Tensor>& inputs,
                              const PrimitiveAttrs& attrs = {}) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ContractError(std::string(primitive_name(kind)) + ": expected " +
                          std::to_string(n) + " inputs, got " +
                          std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case Primitive::Add: need(2); return add(inputs[0], inputs[1]);
    case Primitive::Sub: need(2); return sub(inputs[0], inputs[1]);
    case Primitive::Mul: need(2); return mul(inputs[0], inputs[1]);
    case Primitive::MatMul: need(2); return matmul(inputs[0], inputs[1]);
    case Primitive::Tanh: need(1); return tanh(inputs[0]);
    case Primitive::Sigmoid: need(1); return sigmoid(inputs[0]);
    case Primitive::Relu: need(1); return relu(inputs[0]);
    case Primitive::Softmax: need(1); return softmax(inputs[0]);
    case Primitive::Log: need(1); return log(inputs[0]);
    case Primitive::Concat: return concat(inputs, attrs.axis);
    case Primitive::Slice:
      need(1);
      return slice(inputs[0], attrs.axis, attrs.lo, attrs.hi);
    case Primitive::Sum: need(1); return sum(inputs[0]);
    case Primitive::Mean: need(1); return mean(inputs[0]);
    case Primitive::Scale: need(1); return scale(inputs[0], attrs.factor);
  }
  throw ContractError("apply_primitive: unknown primitive");
}

}  // namespace rnode
