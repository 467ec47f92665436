#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mars/error.hpp"
#include "mars/rng.hpp"

namespace mars {

using Index = Eigen::Index;

template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

/// Boolean attention mask, true = attend allowed.
using BoolMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline std::string shape_str(const std::vector<Index>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline Index shape_numel(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

}  // namespace detail

template <typename S>
class GradTape;

template <typename S>
struct TensorNode {
  std::vector<Index> shape;
  VectorX<S> values;  // flat, row-major
  VectorX<S> grad;    // empty until first accumulation
  bool requires_grad = false;
  const GradTape<S>* producer = nullptr;  // tape that recorded this node, if any

  VectorX<S>& grad_storage() {
    if (grad.size() == 0) grad = VectorX<S>::Zero(values.size());
    return grad;
  }
};

/// Dense tensor with optional gradient slot. Value-semantic handle: copies
/// share the underlying node; ops never mutate existing nodes, they produce
/// new ones. Only the optimizer writes through mutable_values()/grad.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_flat(std::vector<Index> shape, VectorX<S> values, bool requires_grad = false) {
    if (detail::shape_numel(shape) != values.size()) {
      throw ShapeError("Tensor: data length " + std::to_string(values.size()) +
                       " does not match shape " + detail::shape_str(shape));
    }
    for (Index d : shape) {
      if (d <= 0) throw ShapeError("Tensor: non-positive extent in shape " + detail::shape_str(shape));
    }
    auto node = std::make_shared<TensorNode<S>>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    Tensor t(std::move(node));
    t.check_finite("Tensor::from_flat");
    return t;
  }

  static Tensor from_data(std::vector<Index> shape, const std::vector<S>& data, bool requires_grad = false) {
    VectorX<S> v = Eigen::Map<const VectorX<S>>(data.data(), static_cast<Index>(data.size()));
    return from_flat(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor zeros(std::vector<Index> shape, bool requires_grad = false) {
    const Index n = detail::shape_numel(shape);
    return from_flat(std::move(shape), VectorX<S>::Zero(n), requires_grad);
  }

  static Tensor full(std::vector<Index> shape, S value, bool requires_grad = false) {
    const Index n = detail::shape_numel(shape);
    return from_flat(std::move(shape), VectorX<S>::Constant(n, value), requires_grad);
  }

  static Tensor scalar(S value) { return full({1}, value); }

  static Tensor from_matrix(const MatrixX<S>& m, bool requires_grad = false) {
    VectorX<S> v = Eigen::Map<const VectorX<S>>(m.data(), m.size());
    return from_flat({m.rows(), m.cols()}, std::move(v), requires_grad);
  }

  /// Gaussian-initialized tensor, typically a parameter.
  static Tensor randn(std::vector<Index> shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    VectorX<S> v(detail::shape_numel(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(rng.normal(0.0, stddev));
    return from_flat(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<Index>& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index numel() const { return node_->values.size(); }
  Index extent(Index axis) const { return node_->shape.at(static_cast<std::size_t>(axis)); }
  Index rows() const { return rank() == 2 ? extent(0) : (require_rank2("rows"), 0); }
  Index cols() const { return rank() == 2 ? extent(1) : (require_rank2("cols"), 0); }

  const VectorX<S>& values() const { return node_->values; }
  /// Raw write access. Reserved for optimizers, EMA updates and loaders;
  /// ordinary computation must go through ops.
  VectorX<S>& mutable_values() { return node_->values; }

  Eigen::Map<const MatrixX<S>> mat() const {
    require_rank2("mat");
    return {node_->values.data(), extent(0), extent(1)};
  }
  /// View of a rank-1 or rank-2 tensor as a matrix (rank-1 maps to 1 x n).
  Eigen::Map<const MatrixX<S>> as_2d() const {
    if (rank() == 1) return {node_->values.data(), Index(1), extent(0)};
    require_rank2("as_2d");
    return {node_->values.data(), extent(0), extent(1)};
  }

  S item() const {
    if (numel() != 1) {
      throw ContractError("Tensor::item: tensor has " + std::to_string(numel()) + " elements, expected 1");
    }
    return node_->values[0];
  }
  S at(Index i) const { return node_->values[i]; }
  S at(Index r, Index c) const {
    require_rank2("at");
    return node_->values[r * extent(1) + c];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  const VectorX<S>& grad() const {
    if (!has_grad()) throw ContractError("Tensor::grad: gradient not populated");
    return node_->grad;
  }
  void zero_grad() { node_->grad.resize(0); }

  /// Same values, detached from gradient tracking.
  Tensor detach() const {
    auto node = std::make_shared<TensorNode<S>>();
    node->shape = node_->shape;
    node->values = node_->values;
    return Tensor(std::move(node));
  }

  /// Copy values into a new tensor of a (possibly) different scalar type.
  template <typename T>
  Tensor<T> cast() const {
    return Tensor<T>::from_flat(node_->shape, node_->values.template cast<T>());
  }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

  void check_finite(const char* op) const {
    if (!node_->values.allFinite()) {
      throw NumericError(std::string(op) + ": non-finite values produced");
    }
  }

 private:
  explicit Tensor(std::shared_ptr<TensorNode<S>> node) : node_(std::move(node)) {}
  void require_rank2(const char* what) const {
    if (rank() != 2) {
      throw ShapeError(std::string("Tensor::") + what + ": expected rank 2, got shape " +
                       detail::shape_str(node_->shape));
    }
  }
  template <typename T>
  friend class Tensor;
  template <typename T>
  friend class GradTape;
  std::shared_ptr<TensorNode<S>> node_;
};

/// Wengert list for reverse-mode differentiation. Ops executed while a tape
/// is active append their backward rules in execution order, which is by
/// construction a topological order; backward() replays them exactly once
/// in reverse. Fan-out accumulates by summation into the input grads.
template <typename S>
class GradTape {
 public:
  GradTape() {
    prev_ = active_;
    active_ = this;
  }
  ~GradTape() { active_ = prev_; }
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() { return active_; }

  void record(std::shared_ptr<TensorNode<S>> out, std::function<void(const VectorX<S>&)> pull) {
    out->producer = this;
    entries_.push_back({std::move(out), std::move(pull)});
  }

  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + detail::shape_str(loss.shape()));
    }
    if (loss.node()->producer != this) {
      throw ContractError("backward: loss is not on this tape");
    }
    loss.node()->grad_storage().setOnes();
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->out->grad.size() == 0) continue;  // nothing flowed into this node
      it->pull(it->out->grad);
    }
  }

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<TensorNode<S>> out;
    std::function<void(const VectorX<S>&)> pull;
  };
  std::vector<Entry> entries_;
  GradTape* prev_ = nullptr;
  static inline thread_local GradTape* active_ = nullptr;
};

namespace detail {

template <typename S>
bool track(std::initializer_list<const Tensor<S>*> inputs) {
  if (GradTape<S>::active() == nullptr) return false;
  for (const Tensor<S>* t : inputs) {
    if ((*t).requires_grad()) return true;
  }
  return false;
}

template <typename S>
Tensor<S> make_result(std::vector<Index> shape, VectorX<S> values, bool tracked, const char* op) {
  Tensor<S> out = Tensor<S>::from_flat(std::move(shape), std::move(values));
  out.node()->requires_grad = tracked;
  out.check_finite(op);
  return out;
}

/// Accumulate src into the grad slot of node, if it participates in autodiff.
template <typename S>
void accum(const std::shared_ptr<TensorNode<S>>& node, const VectorX<S>& src) {
  if (!node->requires_grad) return;
  node->grad_storage() += src;
}

template <typename S>
void accum_expr(const std::shared_ptr<TensorNode<S>>& node, const MatrixX<S>& src) {
  if (!node->requires_grad) return;
  node->grad_storage() += Eigen::Map<const VectorX<S>>(src.data(), src.size());
}

template <typename S>
Eigen::Map<const MatrixX<S>> grad_as_mat(const VectorX<S>& g, Index rows, Index cols) {
  return {g.data(), rows, cols};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                     detail::shape_str(b.shape()));
  }
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "add");
  bool tracked = detail::track<S>({&a, &b});
  Tensor<S> out = detail::make_result<S>(a.shape(), a.values() + b.values(), tracked, "add");
  if (tracked) {
    auto an = a.node(), bn = b.node();
    GradTape<S>::active()->record(out.node(), [an, bn](const VectorX<S>& g) {
      detail::accum(an, g);
      detail::accum(bn, g);
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "sub");
  bool tracked = detail::track<S>({&a, &b});
  Tensor<S> out = detail::make_result<S>(a.shape(), a.values() - b.values(), tracked, "sub");
  if (tracked) {
    auto an = a.node(), bn = b.node();
    GradTape<S>::active()->record(out.node(), [an, bn](const VectorX<S>& g) {
      detail::accum(an, g);
      if (bn->requires_grad) bn->grad_storage() -= g;
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "mul");
  bool tracked = detail::track<S>({&a, &b});
  Tensor<S> out =
      detail::make_result<S>(a.shape(), (a.values().array() * b.values().array()).matrix(), tracked, "mul");
  if (tracked) {
    auto an = a.node(), bn = b.node();
    GradTape<S>::active()->record(out.node(), [an, bn](const VectorX<S>& g) {
      if (an->requires_grad) an->grad_storage().array() += g.array() * bn->values.array();
      if (bn->requires_grad) bn->grad_storage().array() += g.array() * an->values.array();
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  bool tracked = detail::track<S>({&x});
  Tensor<S> out = detail::make_result<S>(x.shape(), x.values() * factor, tracked, "scale");
  if (tracked) {
    auto xn = x.node();
    GradTape<S>::active()->record(out.node(), [xn, factor](const VectorX<S>& g) {
      if (xn->requires_grad) xn->grad_storage() += g * factor;
    });
  }
  return out;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S value) {
  bool tracked = detail::track<S>({&x});
  Tensor<S> out = detail::make_result<S>(x.shape(), (x.values().array() + value).matrix(), tracked, "add_scalar");
  if (tracked) {
    auto xn = x.node();
    GradTape<S>::active()->record(out.node(),
                                  [xn](const VectorX<S>& g) { detail::accum(xn, g); });
  }
  return out;
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, S factor) { return scale(a, factor); }
template <typename S>
Tensor<S> operator*(S factor, const Tensor<S>& a) { return scale(a, factor); }

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  bool tracked = detail::track<S>({&x});
  VectorX<S> y = (S(1) / (S(1) + (-x.values().array()).exp())).matrix();
  Tensor<S> out = detail::make_result<S>(x.shape(), std::move(y), tracked, "sigmoid");
  if (tracked) {
    auto xn = x.node(), on = out.node();
    GradTape<S>::active()->record(out.node(), [xn, on](const VectorX<S>& g) {
      if (!xn->requires_grad) return;
      xn->grad_storage().array() += g.array() * on->values.array() * (S(1) - on->values.array());
    });
  }
  return out;
}

namespace detail {
template <typename S>
ArrayX<S> gauss_cdf(const ArrayX<S>& x) {
  const S inv_sqrt2 = S(M_SQRT1_2);
  return S(0.5) * (S(1) + (x * inv_sqrt2).unaryExpr([](S v) { return S(std::erf(v)); }));
}
}  // namespace detail

/// Exact GELU, x * Phi(x) with the Gaussian CDF.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  bool tracked = detail::track<S>({&x});
  ArrayX<S> xv = x.values().array();
  ArrayX<S> cdf = detail::gauss_cdf<S>(xv);
  Tensor<S> out = detail::make_result<S>(x.shape(), (xv * cdf).matrix(), tracked, "gelu");
  if (tracked) {
    auto xn = x.node();
    GradTape<S>::active()->record(out.node(), [xn](const VectorX<S>& g) {
      if (!xn->requires_grad) return;
      const S inv_sqrt2pi = S(1.0 / std::sqrt(2.0 * M_PI));
      ArrayX<S> xv = xn->values.array();
      ArrayX<S> cdf = detail::gauss_cdf<S>(xv);
      ArrayX<S> pdf = inv_sqrt2pi * (-S(0.5) * xv.square()).exp();
      xn->grad_storage().array() += g.array() * (cdf + xv * pdf);
    });
  }
  return out;
}

/// Shape-only reinterpretation (row-major layout shared, gradients flow).
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<Index> shape) {
  if (detail::shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: element count mismatch " + detail::shape_str(x.shape()) + " -> " +
                     detail::shape_str(shape));
  }
  bool tracked = detail::track<S>({&x});
  Tensor<S> out = detail::make_result<S>(std::move(shape), x.values(), tracked, "reshape");
  if (tracked) {
    auto xn = x.node();
    GradTape<S>::active()->record(out.node(), [xn](const VectorX<S>& g) { detail::accum(xn, g); });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " x " +
                     detail::shape_str(b.shape()));
  }
  bool tracked = detail::track<S>({&a, &b});
  MatrixX<S> c = a.mat() * b.mat();
  Tensor<S> out = detail::make_result<S>({a.rows(), b.cols()},
                                         Eigen::Map<VectorX<S>>(c.data(), c.size()), tracked, "matmul");
  if (tracked) {
    auto an = a.node(), bn = b.node();
    const Index m = a.rows(), k = a.cols(), n = b.cols();
    GradTape<S>::active()->record(out.node(), [an, bn, m, k, n](const VectorX<S>& g) {
      auto gc = detail::grad_as_mat<S>(g, m, n);
      auto av = detail::grad_as_mat<S>(an->values, m, k);
      auto bv = detail::grad_as_mat<S>(bn->values, k, n);
      if (an->requires_grad) detail::accum_expr<S>(an, gc * bv.transpose());
      if (bn->requires_grad) detail::accum_expr<S>(bn, av.transpose() * gc);
    });
  }
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + detail::shape_str(x.shape()));
  bool tracked = detail::track<S>({&x});
  MatrixX<S> t = x.mat().transpose();
  Tensor<S> out = detail::make_result<S>({x.cols(), x.rows()},
                                         Eigen::Map<VectorX<S>>(t.data(), t.size()), tracked, "transpose");
  if (tracked) {
    auto xn = x.node();
    const Index r = x.rows(), c = x.cols();
    GradTape<S>::active()->record(out.node(), [xn, r, c](const VectorX<S>& g) {
      if (!xn->requires_grad) return;
      detail::accum_expr<S>(xn, detail::grad_as_mat<S>(g, c, r).transpose());
    });
  }
  return out;
}

/// Rows [first, first+count) of a rank-2 tensor.
template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, Index first, Index count) {
  if (x.rank() != 2) throw ShapeError("slice_rows: expected rank 2");
  if (first < 0 || count <= 0 || first + count > x.rows()) {
    throw ContractError("slice_rows: range [" + std::to_string(first) + ", " +
                        std::to_string(first + count) + ") out of " + std::to_string(x.rows()) + " rows");
  }
  bool tracked = detail::track<S>({&x});
  const Index c = x.cols();
  VectorX<S> v = x.values().segment(first * c, count * c);
  Tensor<S> out = detail::make_result<S>({count, c}, std::move(v), tracked, "slice_rows");
  if (tracked) {
    auto xn = x.node();
    GradTape<S>::active()->record(out.node(), [xn, first, count, c](const VectorX<S>& g) {
      if (!xn->requires_grad) return;
      xn->grad_storage().segment(first * c, count * c) += g;
    });
  }
  return out;
}

/// Columns [first, first+count) of a rank-2 tensor.
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, Index first, Index count) {
  if (x.rank() != 2) throw ShapeError("slice_cols: expected rank 2");
  if (first < 0 || count <= 0 || first + count > x.cols()) {
    throw ContractError("slice_cols: column range out of bounds");
  }
  bool tracked = detail::track<S>({&x});
  MatrixX<S> v = x.mat().middleCols(first, count);
  Tensor<S> out = detail::make_result<S>({x.rows(), count},
                                         Eigen::Map<VectorX<S>>(v.data(), v.size()), tracked, "slice_cols");
  if (tracked) {
    auto xn = x.node();
    const Index r = x.rows(), c = x.cols();
    GradTape<S>::active()->record(out.node(), [xn, first, count, r, c](const VectorX<S>& g) {
      if (!xn->requires_grad) return;
      auto gm = detail::grad_as_mat<S>(g, r, count);
      Eigen::Map<MatrixX<S>>(xn->grad_storage().data(), r, c).middleCols(first, count) += gm;
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const Index c = parts[0].rank() == 2 ? parts[0].cols() : -1;
  Index total = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != c) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
    tracked = tracked || detail::track<S>({&p});
  }
  VectorX<S> v(total * c);
  Index off = 0;
  for (const auto& p : parts) {
    v.segment(off, p.numel()) = p.values();
    off += p.numel();
  }
  Tensor<S> out = detail::make_result<S>({total, c}, std::move(v), tracked, "concat_rows");
  if (tracked) {
    std::vector<std::shared_ptr<TensorNode<S>>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.node());
    GradTape<S>::active()->record(out.node(), [nodes](const VectorX<S>& g) {
      Index off = 0;
      for (const auto& n : nodes) {
        const Index sz = n->values.size();
        if (n->requires_grad) n->grad_storage() += g.segment(off, sz);
        off += sz;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const Index r = parts[0].rank() == 2 ? parts[0].rows() : -1;
  Index total = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != r) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
    tracked = tracked || detail::track<S>({&p});
  }
  MatrixX<S> m(r, total);
  Index off = 0;
  for (const auto& p : parts) {
    m.middleCols(off, p.cols()) = p.mat();
    off += p.cols();
  }
  Tensor<S> out =
      detail::make_result<S>({r, total}, Eigen::Map<VectorX<S>>(m.data(), m.size()), tracked, "concat_cols");
  if (tracked) {
    std::vector<std::shared_ptr<TensorNode<S>>> nodes;
    std::vector<Index> widths;
    for (const auto& p : parts) {
      nodes.push_back(p.node());
      widths.push_back(p.cols());
    }
    GradTape<S>::active()->record(out.node(), [nodes, widths, r, total](const VectorX<S>& g) {
      auto gm = detail::grad_as_mat<S>(g, r, total);
      Index off = 0;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i]->requires_grad) {
          Eigen::Map<MatrixX<S>>(nodes[i]->grad_storage().data(), r, widths[i]) += gm.middleCols(off, widths[i]);
        }
        off += widths[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_rows(std::initializer_list<Tensor<S>> parts) {
  return concat_rows(std::vector<Tensor<S>>(parts));
}

template <typename S>
Tensor<S> concat_cols(std::initializer_list<Tensor<S>> parts) {
  return concat_cols(std::vector<Tensor<S>>(parts));
}

/// Embedding lookup: out.row(i) = table.row(indices[i]). Gradient
/// scatter-adds back into the table rows.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& table, const std::vector<Index>& indices) {
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank 2");
  const Index c = table.cols();
  for (Index idx : indices) {
    if (idx < 0 || idx >= table.rows()) {
      throw ContractError("gather_rows: index " + std::to_string(idx) + " out of " +
                          std::to_string(table.rows()) + " rows");
    }
  }
  bool tracked = detail::track<S>({&table});
  MatrixX<S> m(static_cast<Index>(indices.size()), c);
  for (std::size_t i = 0; i < indices.size(); ++i) m.row(static_cast<Index>(i)) = table.mat().row(indices[i]);
  Tensor<S> out = detail::make_result<S>({static_cast<Index>(indices.size()), c},
                                         Eigen::Map<VectorX<S>>(m.data(), m.size()), tracked, "gather_rows");
  if (tracked) {
    auto tn = table.node();
    const Index rows = table.rows();
    GradTape<S>::active()->record(out.node(), [tn, indices, rows, c](const VectorX<S>& g) {
      if (!tn->requires_grad) return;
      auto gm = detail::grad_as_mat<S>(g, static_cast<Index>(indices.size()), c);
      Eigen::Map<MatrixX<S>> tg(tn->grad_storage().data(), rows, c);
      for (std::size_t i = 0; i < indices.size(); ++i) tg.row(indices[i]) += gm.row(static_cast<Index>(i));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Broadcast helpers (vector against the rows of a matrix)
// ---------------------------------------------------------------------------

template <typename S>
const Tensor<S>& require_row_vector(const Tensor<S>& v, Index width, const char* op) {
  const bool ok = (v.rank() == 1 && v.extent(0) == width) ||
                  (v.rank() == 2 && v.extent(0) == 1 && v.extent(1) == width);
  if (!ok) {
    throw ShapeError(std::string(op) + ": expected vector of width " + std::to_string(width) + ", got " +
                     detail::shape_str(v.shape()));
  }
  return v;
}

/// out.row(i) = x.row(i) + v
template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.rank() != 2) throw ShapeError("add_rowwise: x must be rank 2");
  require_row_vector(v, x.cols(), "add_rowwise");
  bool tracked = detail::track<S>({&x, &v});
  MatrixX<S> m = x.mat();
  m.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(v.values().data(), x.cols());
  Tensor<S> out =
      detail::make_result<S>(x.shape(), Eigen::Map<VectorX<S>>(m.data(), m.size()), tracked, "add_rowwise");
  if (tracked) {
    auto xn = x.node(), vn = v.node();
    const Index r = x.rows(), c = x.cols();
    GradTape<S>::active()->record(out.node(), [xn, vn, r, c](const VectorX<S>& g) {
      detail::accum(xn, g);
      if (vn->requires_grad) {
        vn->grad_storage() += detail::grad_as_mat<S>(g, r, c).colwise().sum().transpose();
      }
    });
  }
  return out;
}

/// out.row(i) = x.row(i) .* v
template <typename S>
Tensor<S> mul_rowwise(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.rank() != 2) throw ShapeError("mul_rowwise: x must be rank 2");
  require_row_vector(v, x.cols(), "mul_rowwise");
  bool tracked = detail::track<S>({&x, &v});
  MatrixX<S> m = x.mat();
  auto vrow = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(v.values().data(), x.cols());
  m.array().rowwise() *= vrow.array();
  Tensor<S> out =
      detail::make_result<S>(x.shape(), Eigen::Map<VectorX<S>>(m.data(), m.size()), tracked, "mul_rowwise");
  if (tracked) {
    auto xn = x.node(), vn = v.node();
    const Index r = x.rows(), c = x.cols();
    GradTape<S>::active()->record(out.node(), [xn, vn, r, c](const VectorX<S>& g) {
      auto gm = detail::grad_as_mat<S>(g, r, c);
      auto vrow = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(vn->values.data(), c);
      if (xn->requires_grad) {
        Eigen::Map<MatrixX<S>>(xn->grad_storage().data(), r, c).array() += gm.array().rowwise() * vrow.array();
      }
      if (vn->requires_grad) {
        auto xm = detail::grad_as_mat<S>(xn->values, r, c);
        vn->grad_storage() += (gm.array() * xm.array()).colwise().sum().matrix().transpose();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  bool tracked = detail::track<S>({&x});
  VectorX<S> v(1);
  v[0] = x.values().sum();
  Tensor<S> out = detail::make_result<S>({1}, std::move(v), tracked, "sum");
  if (tracked) {
    auto xn = x.node();
    GradTape<S>::active()->record(out.node(), [xn](const VectorX<S>& g) {
      if (xn->requires_grad) xn->grad_storage().array() += g[0];
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  bool tracked = detail::track<S>({&x});
  VectorX<S> v(1);
  v[0] = x.values().mean();
  Tensor<S> out = detail::make_result<S>({1}, std::move(v), tracked, "mean");
  if (tracked) {
    auto xn = x.node();
    const S inv_n = S(1) / S(x.numel());
    GradTape<S>::active()->record(out.node(), [xn, inv_n](const VectorX<S>& g) {
      if (xn->requires_grad) xn->grad_storage().array() += g[0] * inv_n;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and normalization
// ---------------------------------------------------------------------------

namespace detail {

struct AxisLanes {
  Index outer, n, inner;
};

inline AxisLanes axis_lanes(const std::vector<Index>& shape, Index axis) {
  if (axis < 0 || axis >= static_cast<Index>(shape.size())) {
    throw ContractError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisLanes l{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) l.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace detail

/// Numerically stable softmax along the given axis (max-subtracted).
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, Index axis) {
  const auto lanes = detail::axis_lanes(x.shape(), axis);
  bool tracked = detail::track<S>({&x});
  VectorX<S> y(x.numel());
  const S* xv = x.values().data();
  S* yv = y.data();
  for (Index o = 0; o < lanes.outer; ++o) {
    for (Index i = 0; i < lanes.inner; ++i) {
      const Index base = o * lanes.n * lanes.inner + i;
      S mx = xv[base];
      for (Index j = 1; j < lanes.n; ++j) mx = std::max(mx, xv[base + j * lanes.inner]);
      S total = S(0);
      for (Index j = 0; j < lanes.n; ++j) {
        const S e = std::exp(xv[base + j * lanes.inner] - mx);
        yv[base + j * lanes.inner] = e;
        total += e;
      }
      const S inv = S(1) / total;
      for (Index j = 0; j < lanes.n; ++j) yv[base + j * lanes.inner] *= inv;
    }
  }
  Tensor<S> out = detail::make_result<S>(x.shape(), std::move(y), tracked, "softmax");
  if (tracked) {
    auto xn = x.node(), on = out.node();
    GradTape<S>::active()->record(out.node(), [xn, on, lanes](const VectorX<S>& g) {
      if (!xn->requires_grad) return;
      VectorX<S>& xg = xn->grad_storage();
      const S* yv = on->values.data();
      const S* gv = g.data();
      for (Index o = 0; o < lanes.outer; ++o) {
        for (Index i = 0; i < lanes.inner; ++i) {
          const Index base = o * lanes.n * lanes.inner + i;
          S dot = S(0);
          for (Index j = 0; j < lanes.n; ++j) {
            const Index k = base + j * lanes.inner;
            dot += gv[k] * yv[k];
          }
          for (Index j = 0; j < lanes.n; ++j) {
            const Index k = base + j * lanes.inner;
            xg[k] += yv[k] * (gv[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  return softmax(x, x.rank() - 1);
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row normalization to zero mean and unit (population) variance,
/// eps-stabilized. No learned affine; compose with mul_rowwise/add_rowwise.
template <typename S>
Tensor<S> layer_norm_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("layer_norm_rows: expected rank 2");
  bool tracked = detail::track<S>({&x});
  const Index r = x.rows(), c = x.cols();
  MatrixX<S> xhat(r, c);
  VectorX<S> inv_std(r);
  for (Index i = 0; i < r; ++i) {
    auto row = x.mat().row(i);
    const S mu = row.mean();
    const S var = (row.array() - mu).square().sum() / S(c);
    const S is = S(1) / std::sqrt(var + S(kLayerNormEps));
    inv_std[i] = is;
    xhat.row(i) = (row.array() - mu) * is;
  }
  Tensor<S> out =
      detail::make_result<S>(x.shape(), Eigen::Map<VectorX<S>>(xhat.data(), xhat.size()), tracked, "layer_norm");
  if (tracked) {
    auto xn = x.node(), on = out.node();
    GradTape<S>::active()->record(out.node(), [xn, on, inv_std, r, c](const VectorX<S>& g) {
      if (!xn->requires_grad) return;
      auto gm = detail::grad_as_mat<S>(g, r, c);
      auto ym = detail::grad_as_mat<S>(on->values, r, c);
      Eigen::Map<MatrixX<S>> xg(xn->grad_storage().data(), r, c);
      for (Index i = 0; i < r; ++i) {
        const S gmean = gm.row(i).mean();
        const S gydot = (gm.row(i).array() * ym.row(i).array()).mean();
        xg.row(i).array() +=
            inv_std[i] * (gm.row(i).array() - gmean - ym.row(i).array() * gydot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

inline constexpr double kMaskBias = -1e9;

/// softmax(q k^T / sqrt(d) + mask_bias) v. Mask true = attend allowed;
/// disallowed keys get an additive -1e9 bias, which underflows to an exact
/// zero weight after the max-subtracted softmax.
template <typename S>
Tensor<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               const BoolMask* mask = nullptr) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("scaled_dot_attention: q, k, v must be rank 2");
  }
  if (q.cols() != k.cols()) {
    throw ShapeError("scaled_dot_attention: q/k width mismatch " + detail::shape_str(q.shape()) + " vs " +
                     detail::shape_str(k.shape()));
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("scaled_dot_attention: k/v row mismatch");
  }
  if (mask != nullptr) {
    if (mask->rows() != q.rows() || mask->cols() != k.rows()) {
      throw ShapeError("scaled_dot_attention: mask shape mismatch");
    }
    for (Index i = 0; i < mask->rows(); ++i) {
      if ((mask->row(i).array() == 0).all()) {
        throw ContractError("scaled_dot_attention: query row " + std::to_string(i) +
                            " has no allowed keys");
      }
    }
  }
  const S inv_sqrt_d = S(1) / std::sqrt(S(q.cols()));
  Tensor<S> scores = matmul(q, transpose(k)) * inv_sqrt_d;
  if (mask != nullptr) {
    VectorX<S> bias(scores.numel());
    for (Index i = 0; i < mask->rows(); ++i) {
      for (Index j = 0; j < mask->cols(); ++j) {
        bias[i * mask->cols() + j] = (*mask)(i, j) ? S(0) : S(kMaskBias);
      }
    }
    scores = add(scores, Tensor<S>::from_flat({scores.rows(), scores.cols()}, std::move(bias)));
  }
  return matmul(softmax(scores, Index(1)), v);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kBceEps = 1e-7;

/// Mean binary cross entropy of probabilities against boolean targets.
/// Probabilities are clamped to [eps, 1-eps]; clamped entries get zero
/// gradient (the clamp is flat there).
template <typename S>
Tensor<S> bce_loss(const Tensor<S>& p, const std::vector<std::uint8_t>& targets) {
  if (p.numel() != static_cast<Index>(targets.size())) {
    throw ShapeError("bce_loss: " + std::to_string(p.numel()) + " probabilities vs " +
                     std::to_string(targets.size()) + " targets");
  }
  bool tracked = detail::track<S>({&p});
  const S eps = S(kBceEps);
  const Index n = p.numel();
  S total = S(0);
  for (Index i = 0; i < n; ++i) {
    const S pi = std::min(std::max(p.at(i), eps), S(1) - eps);
    total += targets[static_cast<std::size_t>(i)] ? -std::log(pi) : -std::log(S(1) - pi);
  }
  VectorX<S> v(1);
  v[0] = total / S(n);
  Tensor<S> out = detail::make_result<S>({1}, std::move(v), tracked, "bce_loss");
  if (tracked) {
    auto pn = p.node();
    GradTape<S>::active()->record(out.node(), [pn, targets, n](const VectorX<S>& g) {
      if (!pn->requires_grad) return;
      const S eps = S(kBceEps);
      VectorX<S>& pg = pn->grad_storage();
      const S scale = g[0] / S(n);
      for (Index i = 0; i < n; ++i) {
        const S raw = pn->values[i];
        if (raw < eps || raw > S(1) - eps) continue;  // clamp region is flat
        const S t = targets[static_cast<std::size_t>(i)] ? S(1) : S(0);
        pg[i] += scale * (raw - t) / (raw * (S(1) - raw));
      }
    });
  }
  return out;
}

/// Mean cross entropy of integer targets under row logits ([T x V]).
template <typename S>
Tensor<S> cross_entropy_logits(const Tensor<S>& logits, const std::vector<Index>& targets) {
  if (logits.rank() != 2 || logits.rows() != static_cast<Index>(targets.size())) {
    throw ShapeError("cross_entropy_logits: logits " + detail::shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const Index rows = logits.rows(), cols = logits.cols();
  for (Index t : targets) {
    if (t < 0 || t >= cols) throw ContractError("cross_entropy_logits: target out of range");
  }
  bool tracked = detail::track<S>({&logits});
  MatrixX<S> probs(rows, cols);
  S total = S(0);
  for (Index i = 0; i < rows; ++i) {
    auto row = logits.mat().row(i);
    const S mx = row.maxCoeff();
    ArrayX<S> e = (row.array() - mx).exp().transpose();
    const S z = e.sum();
    probs.row(i) = (e / z).transpose();
    total += std::log(z) + mx - row[targets[static_cast<std::size_t>(i)]];
  }
  VectorX<S> v(1);
  v[0] = total / S(rows);
  Tensor<S> out = detail::make_result<S>({1}, std::move(v), tracked, "cross_entropy_logits");
  if (tracked) {
    auto ln = logits.node();
    GradTape<S>::active()->record(out.node(), [ln, probs, targets, rows, cols](const VectorX<S>& g) {
      if (!ln->requires_grad) return;
      Eigen::Map<MatrixX<S>> lg(ln->grad_storage().data(), rows, cols);
      const S scale = g[0] / S(rows);
      for (Index i = 0; i < rows; ++i) {
        lg.row(i) += scale * probs.row(i);
        lg(i, targets[static_cast<std::size_t>(i)]) -= scale;
      }
    });
  }
  return out;
}

/// Sum of log-softmax probabilities of the targets, one per row.
template <typename S>
S row_logprob_sum(const Tensor<S>& logits, const std::vector<Index>& targets) {
  if (logits.rank() != 2 || logits.rows() != static_cast<Index>(targets.size())) {
    throw ShapeError("row_logprob_sum: shape mismatch");
  }
  S total = S(0);
  for (Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.mat().row(i);
    const S mx = row.maxCoeff();
    const S z = (row.array() - mx).exp().sum();
    total += row[targets[static_cast<std::size_t>(i)]] - mx - std::log(z);
  }
  return total;
}

}  // namespace mars
