#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "affect/errors.hpp"
#include "affect/rng.hpp"

namespace affect {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(std::span<const double> incoming) {
    if (incoming.size() != data.size())
      throw ShapeMismatch("gradient of length " + std::to_string(incoming.size()) +
                          " accumulated into tensor of " + std::to_string(data.size()) +
                          " elements");
    if (grad.empty()) grad.assign(data.size(), 0.0);
    for (std::size_t i = 0; i < incoming.size(); ++i) grad[i] += incoming[i];
  }
};

using NodePtr = std::shared_ptr<Node>;

// Thread-local switch: when false, ops do not record the tape (used for
// evaluation-mode forwards where no backward pass will follow).
inline thread_local bool grad_enabled = true;

}  // namespace detail

/// Disables tape recording for the current scope.
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
///
/// A Tensor is a shared handle to its storage node. Ops create fresh nodes;
/// existing data is never mutated by ops, only gradient accumulation (and the
/// optimizer, between steps) writes into an existing node.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : Tensor(std::move(shape), std::vector<double>(), true) {}

  Tensor(Shape shape, std::vector<double> data)
      : Tensor(std::move(shape), std::move(data), false) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (double& x : t.node_->data) x = value;
    return t;
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  static Tensor of(Shape shape, std::initializer_list<double> values) {
    return Tensor(std::move(shape), std::vector<double>(values));
  }

  /// Identity matrix [n x n].
  static Tensor eye(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = 1.0;
    return t;
  }

  /// Elementwise uniform draw in [lo, hi).
  static Tensor uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.node_->data) x = rng.uniform(lo, hi);
    return t;
  }

  /// Truncated-normal draw, stddev sigma, clipped at two sigma.
  static Tensor truncated_normal(Shape shape, Rng& rng, double sigma) {
    Tensor t(std::move(shape));
    for (double& x : t.node_->data) x = rng.truncated_normal(sigma);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }

  double operator[](std::size_t i) const { return node_->data[i]; }

  /// Value of a single-element tensor.
  double value() const {
    if (size() != 1)
      throw ShapeMismatch("value() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool all_finite() const {
    for (double x : node_->data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }

  const std::vector<double>& grad() const {
    if (!has_grad()) throw MissingGradient("tensor has no gradient buffer");
    return node_->grad;
  }

  /// grad += incoming, allocating a zero buffer first if absent.
  void accumulate_grad(std::span<const double> incoming) { node_->accumulate(incoming); }

  void clear_grad() { node_->grad.clear(); }

  /// Deep copy of the data (no tape history, keeps requires_grad flag).
  Tensor clone() const {
    Tensor t(node_->shape, node_->data);
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  /// Reverse-mode backward from a scalar. Seeds d(self)/d(self) = 1 and
  /// propagates through the recorded tape in reverse topological order.
  void backward() const {
    if (size() != 1)
      throw ShapeMismatch("backward() requires a scalar, got " + shape_str(shape()));
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  detail::NodePtr node() const { return node_; }

 private:
  Tensor(Shape shape, std::vector<double> data, bool zero_fill) {
    for (std::size_t e : shape)
      if (e == 0) throw ShapeMismatch("zero extent in shape " + shape_str(shape));
    const std::size_t numel = shape_numel(shape);
    if (zero_fill)
      data.assign(numel, 0.0);
    else if (data.size() != numel)
      throw ShapeMismatch("data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  detail::NodePtr node_;

  friend Tensor wrap_result(Shape, std::vector<double>,
                            std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
};

/// Builds an op result: attaches parents and a backward function only when the
/// tape is enabled and some input participates in differentiation.
inline Tensor wrap_result(Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs,
                          std::function<void(detail::Node&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  if (detail::grad_enabled) {
    bool track = false;
    for (const Tensor& t : inputs) track = track || t.requires_grad();
    if (track) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(inputs.size());
      for (const Tensor& t : inputs) out.node_->parents.push_back(t.node());
      out.node_->backward = std::move(backward);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

enum class EwOp { Add, Sub, Mul };

inline Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatch("elementwise operands " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const std::size_t n = a.size();
  std::vector<double> out(n);
  switch (op) {
    case EwOp::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
      break;
    case EwOp::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
      break;
    case EwOp::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
      break;
  }
  auto pa = a.node(), pb = b.node();
  return wrap_result(a.shape(), std::move(out), {a, b},
                     [op, pa, pb](detail::Node& self) {
                       const std::size_t n = self.grad.size();
                       std::vector<double> g(n);
                       if (pa->requires_grad) {
                         for (std::size_t i = 0; i < n; ++i)
                           g[i] = op == EwOp::Mul ? self.grad[i] * pb->data[i]
                                                  : self.grad[i];
                         pa->accumulate(g);
                       }
                       if (pb->requires_grad) {
                         for (std::size_t i = 0; i < n; ++i) {
                           switch (op) {
                             case EwOp::Add: g[i] = self.grad[i]; break;
                             case EwOp::Sub: g[i] = -self.grad[i]; break;
                             case EwOp::Mul: g[i] = self.grad[i] * pa->data[i]; break;
                           }
                         }
                         pb->accumulate(g);
                       }
                     });
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwOp::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwOp::Sub, a, b); }
/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwOp::Mul, a, b); }

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = c * a[i];
  auto pa = a.node();
  return wrap_result(a.shape(), std::move(out), {a}, [c, pa](detail::Node& self) {
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = c * self.grad[i];
    pa->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

// fwd(x) and dfdy(y, x): derivative expressed from output y and input x.
template <typename Fwd, typename Dfdy>
Tensor unary_op(const Tensor& a, Fwd fwd, Dfdy dfdy) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fwd(a[i]);
  auto pa = a.node();
  return wrap_result(a.shape(), std::move(out), {a}, [pa, dfdy](detail::Node& self) {
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = self.grad[i] * dfdy(self.data[i], pa->data[i]);
    pa->accumulate(g);
  });
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double y, double) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double y, double) { return 1.0 - y * y; });
}

// ---------------------------------------------------------------------------
// Matrix product, bias broadcast, reductions, reshapes
// ---------------------------------------------------------------------------

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

}  // namespace detail

/// Standard matrix product of [m x k] and [k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul operands " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  {
    detail::ECMap ma(a.data().data(), m, k), mb(b.data().data(), k, n);
    detail::EMap mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  auto pa = a.node(), pb = b.node();
  return wrap_result({m, n}, std::move(out), {a, b},
                     [m, k, n, pa, pb](detail::Node& self) {
                       detail::ECMap go(self.grad.data(), m, n);
                       detail::ECMap ma(pa->data.data(), m, k), mb(pb->data.data(), k, n);
                       if (pa->requires_grad) {
                         std::vector<double> ga(m * k);
                         detail::EMap(ga.data(), m, k).noalias() = go * mb.transpose();
                         pa->accumulate(ga);
                       }
                       if (pb->requires_grad) {
                         std::vector<double> gb(k * n);
                         detail::EMap(gb.data(), k, n).noalias() = ma.transpose() * go;
                         pb->accumulate(gb);
                       }
                     });
}

/// Adds a length-k vector to every row of an [... x k] tensor.
inline Tensor bias_add(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1 || x.dim(x.rank() - 1) != b.dim(0))
    throw ShapeMismatch("bias_add " + shape_str(x.shape()) + " vs " +
                        shape_str(b.shape()));
  const std::size_t k = b.dim(0), rows = x.size() / k;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x[r * k + j] + b[j];
  auto px = x.node(), pb = b.node();
  return wrap_result(x.shape(), std::move(out), {x, b},
                     [k, rows, px, pb](detail::Node& self) {
                       if (px->requires_grad) px->accumulate(self.grad);
                       if (pb->requires_grad) {
                         std::vector<double> gb(k, 0.0);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < k; ++j)
                             gb[j] += self.grad[r * k + j];
                         pb->accumulate(gb);
                       }
                     });
}

/// Sum of all elements, as a scalar tensor.
inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
  auto pa = a.node();
  return wrap_result({1}, {s}, {a}, [pa](detail::Node& self) {
    std::vector<double> g(pa->data.size(), self.grad[0]);
    pa->accumulate(g);
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeMismatch("reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  auto pa = a.node();
  return wrap_result(std::move(shape), std::move(out), {a},
                     [pa](detail::Node& self) { pa->accumulate(self.grad); });
}

/// Collapses all trailing dimensions: [n x d1 x ... x dk] -> [n x (d1*...*dk)].
inline Tensor flatten(const Tensor& a) {
  return reshape(a, {a.dim(0), a.size() / a.dim(0)});
}

}  // namespace affect
