#pragma once

// Dense 2-D tensors with tape-free reverse-mode differentiation.
//
// Every Tensor is a handle to a graph node. Ops whose inputs require grad
// record their inputs and an adjoint closure on the result node; backward()
// walks the graph from a scalar output in reverse topological order. Leaf
// gradients accumulate across backward() calls until zero_grad().

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "passatt/error.hpp"

namespace passatt::nx {

using Index = Eigen::Index;

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Node {
  Mat<T> value;
  Mat<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Mat<T>&)> adjoint;

  void accumulate(const Mat<T>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

template <class T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() : node_(std::make_shared<Node<T>>()) {}
  explicit Tensor(Mat<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(Mat<T>::Zero(rows, cols), requires_grad);
  }
  static Tensor constant(Index rows, Index cols, T v) { return Tensor(Mat<T>::Constant(rows, cols, v)); }
  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Mat<T>::Constant(1, 1, v), requires_grad); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows, bool requires_grad = false) {
    Mat<T> m(static_cast<Index>(rows.size()), rows.size() ? static_cast<Index>(rows.begin()->size()) : 0);
    Index r = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != m.cols()) throw ShapeError("from_rows: ragged rows");
      Index c = 0;
      for (T v : row) m(r, c++) = v;
      ++r;
    }
    return Tensor(std::move(m), requires_grad);
  }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }

  const Mat<T>& value() const { return node_->value; }
  /// Direct access for optimizers and initializers; never call mid-graph.
  Mat<T>& mutable_value() { return node_->value; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str());
    return node_->value(0, 0);
  }
  T operator()(Index r, Index c) const { return node_->value(r, c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool is_leaf() const { return node_->is_leaf; }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Zeros when no gradient has been accumulated yet.
  Mat<T> grad() const { return has_grad() ? node_->grad : Mat<T>::Zero(rows(), cols()); }
  void zero_grad() { node_->grad.resize(0, 0); }
  const char* op_name() const { return node_->op; }

  std::string shape_str() const { return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]"; }

  /// Same value, cut from the graph.
  Tensor detach() const { return Tensor(node_->value); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
std::string shape_str(const Tensor<T>& t) {
  return t.shape_str();
}

namespace detail {

template <class T, class Adjoint>
Tensor<T> record(const char* op, Mat<T> value, std::initializer_list<Tensor<T>> inputs, Adjoint&& adjoint) {
  Tensor<T> out(std::move(value));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any && grad_enabled()) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.is_leaf = false;
    node.op = op;
    for (const auto& in : inputs) node.inputs.push_back(in.node());
    node.adjoint = std::forward<Adjoint>(adjoint);
  }
  return out;
}

template <class T>
Tensor<T> record_many(const char* op, Mat<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(const Mat<T>&)> adjoint) {
  Tensor<T> out(std::move(value));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any && grad_enabled()) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.is_leaf = false;
    node.op = op;
    for (const auto& in : inputs) node.inputs.push_back(in.node());
    node.adjoint = std::move(adjoint);
  }
  return out;
}

template <class T, class Expr>
void push(const std::shared_ptr<Node<T>>& n, const Expr& g) {
  if (n->requires_grad) n->accumulate(g);
}

[[noreturn]] inline void shape_mismatch(const char* op, const std::string& a, const std::string& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a + " and " + b);
}

/// Sums `g` down to (rows, cols) for broadcast adjoints.
template <class T>
Mat<T> reduce_to(const Mat<T>& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Mat<T>::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

template <class T>
bool broadcastable(const Tensor<T>& a, const Tensor<T>& b) {
  return (b.rows() == a.rows() || b.rows() == 1) && (b.cols() == a.cols() || b.cols() == 1);
}

template <class T>
Mat<T> expand(const Mat<T>& b, Index rows, Index cols) {
  if (b.rows() == rows && b.cols() == cols) return b;
  if (b.rows() == 1 && b.cols() == 1) return Mat<T>::Constant(rows, cols, b(0, 0));
  if (b.rows() == 1) return b.replicate(rows, 1);
  return b.replicate(1, cols);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Backward

/// Populates ∂out/∂leaf for every requires-grad leaf reachable from `out`.
template <class T>
void backward(const Tensor<T>& out) {
  if (out.size() != 1) throw ShapeError("backward: output must be scalar, got " + out.shape_str());
  if (!out.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{out.node().get(), 0}};
  seen.insert(out.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order)
    if (!n->is_leaf) n->grad.resize(0, 0);
  out.node()->accumulate(Mat<T>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf || n->grad.size() == 0) continue;
    n->adjoint(n->grad);
  }
}

// ---------------------------------------------------------------------------
// Primitives

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) detail::shape_mismatch("matmul", a.shape_str(), b.shape_str());
  auto an = a.node(), bn = b.node();
  return detail::record<T>("matmul", a.value() * b.value(), {a, b}, [an, bn](const Mat<T>& g) {
    if (an->requires_grad) an->accumulate(g * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * g);
  });
}

/// a · bᵀ
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) detail::shape_mismatch("matmul_nt", a.shape_str(), b.shape_str());
  auto an = a.node(), bn = b.node();
  return detail::record<T>("matmul_nt", a.value() * b.value().transpose(), {a, b}, [an, bn](const Mat<T>& g) {
    if (an->requires_grad) an->accumulate(g * bn->value);
    if (bn->requires_grad) bn->accumulate(g.transpose() * an->value);
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  auto an = a.node();
  return detail::record<T>("transpose", a.value().transpose(), {a},
                           [an](const Mat<T>& g) { an->accumulate(g.transpose()); });
}

/// Elementwise a + b; b may be a row vector, column vector or scalar broadcast over a.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::broadcastable(a, b)) detail::shape_mismatch("add", a.shape_str(), b.shape_str());
  auto an = a.node(), bn = b.node();
  Mat<T> v = a.value() + detail::expand(b.value(), a.rows(), a.cols());
  return detail::record<T>("add", std::move(v), {a, b}, [an, bn](const Mat<T>& g) {
    detail::push(an, g);
    if (bn->requires_grad) bn->accumulate(detail::reduce_to(g, bn->value.rows(), bn->value.cols()));
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::broadcastable(a, b)) detail::shape_mismatch("sub", a.shape_str(), b.shape_str());
  auto an = a.node(), bn = b.node();
  Mat<T> v = a.value() - detail::expand(b.value(), a.rows(), a.cols());
  return detail::record<T>("sub", std::move(v), {a, b}, [an, bn](const Mat<T>& g) {
    detail::push(an, g);
    if (bn->requires_grad) bn->accumulate(-detail::reduce_to(g, bn->value.rows(), bn->value.cols()));
  });
}

/// Elementwise product with the same broadcast rules as add().
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::broadcastable(a, b)) detail::shape_mismatch("mul", a.shape_str(), b.shape_str());
  auto an = a.node(), bn = b.node();
  Mat<T> bx = detail::expand(b.value(), a.rows(), a.cols());
  Mat<T> v = a.value().cwiseProduct(bx);
  return detail::record<T>("mul", std::move(v), {a, b}, [an, bn, bx = std::move(bx)](const Mat<T>& g) {
    if (an->requires_grad) an->accumulate(g.cwiseProduct(bx));
    if (bn->requires_grad) {
      Mat<T> gb = g.cwiseProduct(an->value);
      bn->accumulate(detail::reduce_to(gb, bn->value.rows(), bn->value.cols()));
    }
  });
}

/// scale·a + shift with constant scale and shift.
template <class T>
Tensor<T> affine(const Tensor<T>& a, T scale, T shift = T(0)) {
  auto an = a.node();
  Mat<T> v = (a.value().array() * scale + shift).matrix();
  return detail::record<T>("affine", std::move(v), {a}, [an, scale](const Mat<T>& g) { an->accumulate(g * scale); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return affine(a, s, T(0));
}

/// Additive-mask values: 0 keeps a position, -inf removes it.
template <class T>
Mat<T> additive_mask(const std::vector<bool>& row_keep, const std::vector<bool>& col_keep) {
  const T ninf = -std::numeric_limits<T>::infinity();
  Mat<T> m(static_cast<Index>(row_keep.size()), static_cast<Index>(col_keep.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = (row_keep[i] && col_keep[j]) ? T(0) : ninf;
  return m;
}

/// Row-wise softmax of x + mask. `mask` is empty, or has x's shape, or is a
/// single row broadcast to every row. Rows whose every entry is masked to
/// -inf produce all-zero output.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x, const Mat<T>& mask = Mat<T>()) {
  if (mask.size() != 0 && !((mask.rows() == x.rows() || mask.rows() == 1) && mask.cols() == x.cols()))
    throw ShapeError("softmax_rows: mask shape [" + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                     "] incompatible with " + x.shape_str());
  const Index rows = x.rows(), cols = x.cols();
  Mat<T> y(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Index j = 0; j < cols; ++j) {
      T m = mask.size() == 0 ? T(0) : mask(mask.rows() == 1 ? 0 : i, j);
      T v = x.value()(i, j) + m;
      y(i, j) = v;
      mx = std::max(mx, v);
    }
    if (mx == -std::numeric_limits<T>::infinity()) {
      y.row(i).setZero();
      continue;
    }
    T sum = 0;
    for (Index j = 0; j < cols; ++j) {
      T e = y(i, j) == -std::numeric_limits<T>::infinity() ? T(0) : std::exp(y(i, j) - mx);
      y(i, j) = e;
      sum += e;
    }
    y.row(i) /= sum;
  }
  auto xn = x.node();
  Mat<T> yv = y;
  return detail::record<T>("softmax_rows", std::move(y), {x}, [xn, yv = std::move(yv)](const Mat<T>& g) {
    Mat<T> gy = g.cwiseProduct(yv);
    Eigen::Matrix<T, Eigen::Dynamic, 1> dots = gy.rowwise().sum();
    Mat<T> gx = gy - yv.cwiseProduct(dots.replicate(1, yv.cols()));
    xn->accumulate(gx);
  });
}

/// Row-wise layer normalization followed by gain and bias (both 1×cols).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols())
    detail::shape_mismatch("layer_norm", x.shape_str(), gain.shape_str() + "/" + bias.shape_str());
  const Index rows = x.rows(), cols = x.cols();
  Mat<T> xhat(rows, cols);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(rows);
  for (Index i = 0; i < rows; ++i) {
    T mean = x.value().row(i).mean();
    auto centered = (x.value().row(i).array() - mean).matrix();
    T var = centered.squaredNorm() / static_cast<T>(cols);
    inv_std(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std(i);
  }
  Mat<T> y = xhat.cwiseProduct(gain.value().replicate(rows, 1)) + bias.value().replicate(rows, 1);
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return detail::record<T>(
      "layer_norm", std::move(y), {x, gain, bias},
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Mat<T>& g) {
        if (gn->requires_grad) gn->accumulate(g.cwiseProduct(xhat).colwise().sum());
        if (bn->requires_grad) bn->accumulate(g.colwise().sum());
        if (xn->requires_grad) {
          const Index rows = g.rows(), cols = g.cols();
          Mat<T> gxhat = g.cwiseProduct(gn->value.replicate(rows, 1));
          Mat<T> gx(rows, cols);
          for (Index i = 0; i < rows; ++i) {
            T m1 = gxhat.row(i).mean();
            T m2 = gxhat.row(i).cwiseProduct(xhat.row(i)).mean();
            gx.row(i) = ((gxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i)).matrix();
          }
          xn->accumulate(gx);
        }
      });
}

/// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(0.70710678118654752440);
  Mat<T> y = x.value().unaryExpr([&](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); });
  auto xn = x.node();
  return detail::record<T>("gelu", std::move(y), {x}, [xn, inv_sqrt2](const Mat<T>& g) {
    const T inv_sqrt2pi = T(0.39894228040143267794);
    Mat<T> d = xn->value.unaryExpr([&](T v) {
      return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
    });
    xn->accumulate(g.cwiseProduct(d));
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Mat<T> y = x.value().cwiseMax(T(0));
  auto xn = x.node();
  return detail::record<T>("relu", std::move(y), {x}, [xn](const Mat<T>& g) {
    xn->accumulate(g.cwiseProduct(xn->value.unaryExpr([](T v) { return v > T(0) ? T(1) : T(0); })));
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Mat<T> y = x.value().unaryExpr([](T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    T e = std::exp(v);
    return e / (T(1) + e);
  });
  auto xn = x.node();
  Mat<T> yv = y;
  return detail::record<T>("sigmoid", std::move(y), {x}, [xn, yv = std::move(yv)](const Mat<T>& g) {
    xn->accumulate(g.cwiseProduct(yv.cwiseProduct((T(1) - yv.array()).matrix())));
  });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  auto xn = x.node();
  return detail::record<T>("log", x.value().array().log().matrix(), {x},
                           [xn](const Mat<T>& g) { xn->accumulate(g.cwiseQuotient(xn->value)); });
}

/// Clips values to [lo, hi]. The adjoint is the identity (straight-through),
/// so saturated confidences still receive gradient.
template <class T>
Tensor<T> clip(const Tensor<T>& x, T lo, T hi) {
  auto xn = x.node();
  return detail::record<T>("clip", x.value().cwiseMax(lo).cwiseMin(hi), {x},
                           [xn](const Mat<T>& g) { xn->accumulate(g); });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  auto xn = x.node();
  return detail::record<T>("sum", Mat<T>::Constant(1, 1, x.value().sum()), {x}, [xn](const Mat<T>& g) {
    xn->accumulate(Mat<T>::Constant(xn->value.rows(), xn->value.cols(), g(0, 0)));
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// r×c → r×1
template <class T>
Tensor<T> sum_cols(const Tensor<T>& x) {
  auto xn = x.node();
  return detail::record<T>("sum_cols", Mat<T>(x.value().rowwise().sum()), {x},
                           [xn](const Mat<T>& g) { xn->accumulate(g.replicate(1, xn->value.cols())); });
}

/// r×c → 1×c
template <class T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  if (x.rows() == 0) throw ShapeError("mean_rows: no rows");
  auto xn = x.node();
  const T inv = T(1) / static_cast<T>(x.rows());
  return detail::record<T>("mean_rows", Mat<T>(x.value().colwise().sum() * inv), {x}, [xn, inv](const Mat<T>& g) {
    xn->accumulate(g.replicate(xn->value.rows(), 1) * inv);
  });
}

/// r×c → 1×c column-wise maximum; gradient flows to the first arg-max.
template <class T>
Tensor<T> max_rows(const Tensor<T>& x) {
  if (x.rows() == 0) throw ShapeError("max_rows: no rows");
  std::vector<Index> arg(static_cast<std::size_t>(x.cols()));
  Mat<T> y(1, x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    Index best = 0;
    for (Index i = 1; i < x.rows(); ++i)
      if (x.value()(i, j) > x.value()(best, j)) best = i;
    arg[static_cast<std::size_t>(j)] = best;
    y(0, j) = x.value()(best, j);
  }
  auto xn = x.node();
  return detail::record<T>("max_rows", std::move(y), {x}, [xn, arg = std::move(arg)](const Mat<T>& g) {
    Mat<T> gx = Mat<T>::Zero(xn->value.rows(), xn->value.cols());
    for (Index j = 0; j < gx.cols(); ++j) gx(arg[static_cast<std::size_t>(j)], j) = g(0, j);
    xn->accumulate(gx);
  });
}

/// Rows of `table` selected by `ids`.
template <class T, class Id>
Tensor<T> embedding(const Tensor<T>& table, std::span<const Id> ids) {
  Mat<T> y(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = static_cast<Index>(ids[i]);
    if (id < 0 || id >= table.rows())
      throw ShapeError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(table.rows()) +
                       " rows");
    y.row(static_cast<Index>(i)) = table.value().row(id);
  }
  auto tn = table.node();
  std::vector<Index> idx(ids.begin(), ids.end());
  return detail::record<T>("embedding", std::move(y), {table}, [tn, idx = std::move(idx)](const Mat<T>& g) {
    Mat<T> gt = Mat<T>::Zero(tn->value.rows(), tn->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Index>(i));
    tn->accumulate(gt);
  });
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  return embedding<T, std::size_t>(x, rows);
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols())
    throw ShapeError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") outside " + x.shape_str());
  auto xn = x.node();
  return detail::record<T>("slice_cols", Mat<T>(x.value().middleCols(start, count)), {x},
                           [xn, start, count](const Mat<T>& g) {
                             Mat<T> gx = Mat<T>::Zero(xn->value.rows(), xn->value.cols());
                             gx.middleCols(start, count) = g;
                             xn->accumulate(gx);
                           });
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows())
      detail::shape_mismatch("concat_cols", parts.front().shape_str(), p.shape_str());
    cols += p.cols();
  }
  Mat<T> y(parts.front().rows(), cols);
  std::vector<std::pair<std::shared_ptr<Node<T>>, Index>> spans;
  Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.node(), at);
    at += p.cols();
  }
  return detail::record_many<T>("concat_cols", std::move(y), parts, [spans = std::move(spans)](const Mat<T>& g) {
    for (const auto& [n, off] : spans)
      if (n->requires_grad) n->accumulate(g.middleCols(off, n->value.cols()));
  });
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols())
      detail::shape_mismatch("concat_rows", parts.front().shape_str(), p.shape_str());
    rows += p.rows();
  }
  Mat<T> y(rows, parts.front().cols());
  std::vector<std::pair<std::shared_ptr<Node<T>>, Index>> spans;
  Index at = 0;
  for (const auto& p : parts) {
    y.middleRows(at, p.rows()) = p.value();
    spans.emplace_back(p.node(), at);
    at += p.rows();
  }
  return detail::record_many<T>("concat_rows", std::move(y), parts, [spans = std::move(spans)](const Mat<T>& g) {
    for (const auto& [n, off] : spans)
      if (n->requires_grad) n->accumulate(g.middleRows(off, n->value.rows()));
  });
}

/// Multiplies by a constant mask (same shape, row or column broadcast).
template <class T>
Tensor<T> mask_mul(const Tensor<T>& x, const Mat<T>& mask) {
  return mul(x, Tensor<T>(mask));
}

/// Inverted dropout; identity when rate is 0.
template <class T, class Rng>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ShapeError("dropout: rate must be < 1");
  const T keep_scale = T(1.0 / (1.0 - rate));
  Mat<T> m(x.rows(), x.cols());
  for (Index i = 0; i < m.size(); ++i) {
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m.data()[i] = u < rate ? T(0) : keep_scale;
  }
  return mask_mul(x, m);
}

// Operator sugar.
template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

}  // namespace passatt::nx
