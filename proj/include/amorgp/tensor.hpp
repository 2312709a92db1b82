#pragma once

// Minimal reverse-mode autodiff over dense matrices. Nodes live on a Tape in
// creation order, which is already a topological order, so the backward pass
// is a single reverse sweep with no sorting. Parameters are leaf nodes owned
// by a ParamStore and accumulate gradients across backward calls until
// zero_grad. Everything is templated on the scalar type; float64 is the
// default and float32 is used for network training when configured.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numbers>
#include <span>
#include <type_traits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "amorgp/errors.hpp"

namespace amorgp {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
struct TensorNode {
  Mat<S> val;
  Mat<S> grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::function<void()> backward;
  std::string name;  // parameters only

  void accumulate(const Mat<S>& g) {
    if (!requires_grad) return;
    if (!grad_ready) {
      grad = g;
      grad_ready = true;
    } else {
      grad += g;
    }
  }
};

/// Handle to a node; lifetime is owned by a Tape or ParamStore.
template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorNode<S>* n) : node_(n) {}

  TensorNode<S>* node() const { return node_; }
  bool valid() const { return node_ != nullptr; }
  Eigen::Index rows() const { return node_->val.rows(); }
  Eigen::Index cols() const { return node_->val.cols(); }
  const Mat<S>& value() const { return node_->val; }
  S scalar() const {
    if (node_->val.size() != 1)
      throw std::invalid_argument("scalar() on non-scalar tensor");
    return node_->val(0, 0);
  }
  const Mat<S>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }

 private:
  TensorNode<S>* node_ = nullptr;
};

template <class S>
class Tape {
 public:
  TensorNode<S>* alloc() { return &nodes_.emplace_back(); }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  /// Reverse sweep from a scalar output. Gradients of reachable parameter
  /// leaves accumulate into their grad buffers.
  void backward(const Tensor<S>& loss) {
    if (!loss.valid() || loss.node()->val.size() != 1)
      throw std::invalid_argument("backward: loss must be a scalar tensor");
    if (!loss.node()->requires_grad)
      throw std::invalid_argument("backward: loss does not require gradients");
    loss.node()->accumulate(Mat<S>::Ones(1, 1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->grad_ready && it->backward) it->backward();
  }

  static Tape<S>*& current() {
    thread_local Tape<S>* cur = nullptr;
    return cur;
  }

  static Tape<S>& require_current() {
    Tape<S>* t = current();
    if (!t) throw std::logic_error("no active tape; create a TapeScope first");
    return *t;
  }

 private:
  std::deque<TensorNode<S>> nodes_;
};

template <class S>
class TapeScope {
 public:
  explicit TapeScope(Tape<S>& tape) : prev_(Tape<S>::current()) {
    Tape<S>::current() = &tape;
  }
  ~TapeScope() { Tape<S>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<S>* prev_;
};

/// While alive, newly created ops skip gradient bookkeeping.
class NoGradScope {
 public:
  NoGradScope() : prev_(flag()) { flag() = true; }
  ~NoGradScope() { flag() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

  static bool enabled() { return flag(); }

 private:
  static bool& flag() {
    thread_local bool f = false;
    return f;
  }
  bool prev_;
};

/// Named parameter leaves; owns storage for model weights.
template <class S>
class ParamStore {
 public:
  Tensor<S> add(const std::string& name, Mat<S> init) {
    if (by_name_.count(name))
      throw std::invalid_argument("duplicate parameter name: " + name);
    TensorNode<S>& n = store_.emplace_back();
    n.val = std::move(init);
    n.requires_grad = true;
    n.name = name;
    ordered_.push_back(&n);
    by_name_[name] = &n;
    return Tensor<S>(&n);
  }

  const std::vector<TensorNode<S>*>& nodes() const { return ordered_; }

  TensorNode<S>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (auto* p : ordered_) n += static_cast<std::size_t>(p->val.size());
    return n;
  }

  void zero_grad() {
    for (auto* p : ordered_) {
      p->grad_ready = false;
      p->grad.resize(0, 0);
    }
  }

  double grad_norm() const {
    double sq = 0.0;
    for (auto* p : ordered_)
      if (p->grad_ready) sq += static_cast<double>(p->grad.squaredNorm());
    return std::sqrt(sq);
  }

  void scale_grads(double factor) {
    for (auto* p : ordered_)
      if (p->grad_ready) p->grad *= static_cast<S>(factor);
  }

 private:
  std::deque<TensorNode<S>> store_;
  std::vector<TensorNode<S>*> ordered_;
  std::unordered_map<std::string, TensorNode<S>*> by_name_;
};

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
Tensor<S> make_node(Mat<S> val, bool requires_grad,
                    std::function<void()> backward) {
  TensorNode<S>* n = Tape<S>::require_current().alloc();
  n->val = std::move(val);
  if (requires_grad && !NoGradScope::enabled()) {
    n->requires_grad = true;
    n->backward = std::move(backward);
  }
  return Tensor<S>(n);
}

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

template <class S>
void check_scalar(const Tensor<S>& a, const char* op) {
  if (a.rows() != 1 || a.cols() != 1)
    throw std::invalid_argument(std::string(op) + ": expected 1x1 tensor");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops
// ---------------------------------------------------------------------------

template <class Derived>
Tensor<typename Derived::Scalar> constant(const Eigen::MatrixBase<Derived>& value) {
  using S = typename Derived::Scalar;
  return detail::make_node<S>(Mat<S>(value), false, nullptr);
}

template <class S, std::enable_if_t<std::is_arithmetic_v<S>, int> = 0>
Tensor<S> constant(S value) {
  return detail::make_node<S>(Mat<S>::Constant(1, 1, value), false, nullptr);
}

template <class S>
Tensor<S> add(Tensor<S> a, Tensor<S> b) {
  detail::check_same_shape(a, b, "add");
  auto* an = a.node();
  auto* bn = b.node();
  auto* out = detail::make_node<S>(an->val + bn->val,
                                   an->requires_grad || bn->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, bn, out] {
      an->accumulate(out->grad);
      bn->accumulate(out->grad);
    };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> add_n(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("add_n: empty input");
  bool rg = false;
  Mat<S> sum = parts[0].value();
  rg |= parts[0].requires_grad();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    detail::check_same_shape(parts[0], parts[i], "add_n");
    sum += parts[i].value();
    rg |= parts[i].requires_grad();
  }
  auto* out = detail::make_node<S>(std::move(sum), rg, nullptr).node();
  if (out->requires_grad) {
    std::vector<TensorNode<S>*> ins;
    ins.reserve(parts.size());
    for (const auto& p : parts) ins.push_back(p.node());
    out->backward = [ins, out] {
      for (auto* n : ins) n->accumulate(out->grad);
    };
  }
  return Tensor<S>(out);
}

template <class S>
Tensor<S> sub(Tensor<S> a, Tensor<S> b) {
  detail::check_same_shape(a, b, "sub");
  auto* an = a.node();
  auto* bn = b.node();
  auto* out = detail::make_node<S>(an->val - bn->val,
                                   an->requires_grad || bn->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, bn, out] {
      an->accumulate(out->grad);
      bn->accumulate(-out->grad);
    };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
  detail::check_same_shape(a, b, "mul");
  auto* an = a.node();
  auto* bn = b.node();
  auto* out = detail::make_node<S>(an->val.cwiseProduct(bn->val),
                                   an->requires_grad || bn->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, bn, out] {
      an->accumulate(out->grad.cwiseProduct(bn->val));
      bn->accumulate(out->grad.cwiseProduct(an->val));
    };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> scale(Tensor<S> a, S c) {
  auto* an = a.node();
  auto* out =
      detail::make_node<S>(an->val * c, an->requires_grad, nullptr).node();
  if (out->requires_grad)
    out->backward = [an, out, c] { an->accumulate(out->grad * c); };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> add_const(Tensor<S> a, S c) {
  auto* an = a.node();
  auto* out = detail::make_node<S>(an->val.array() + c, an->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, out] { an->accumulate(out->grad); };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> matmul(Tensor<S> a, Tensor<S> b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimension mismatch");
  auto* an = a.node();
  auto* bn = b.node();
  auto* out = detail::make_node<S>(an->val * bn->val,
                                   an->requires_grad || bn->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, bn, out] {
      if (an->requires_grad) an->accumulate(out->grad * bn->val.transpose());
      if (bn->requires_grad) bn->accumulate(an->val.transpose() * out->grad);
    };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> transpose(Tensor<S> a) {
  auto* an = a.node();
  auto* out = detail::make_node<S>(an->val.transpose(), an->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, out] { an->accumulate(out->grad.transpose()); };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> slice_cols(Tensor<S> a, Eigen::Index first, Eigen::Index width) {
  if (first < 0 || width < 1 || first + width > a.cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  auto* an = a.node();
  auto* out = detail::make_node<S>(an->val.middleCols(first, width),
                                   an->requires_grad, nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, out, first, width] {
      if (!an->grad_ready) {
        an->grad = Mat<S>::Zero(an->val.rows(), an->val.cols());
        an->grad_ready = true;
      }
      an->grad.middleCols(first, width) += out->grad;
    };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> slice_rows(Tensor<S> a, Eigen::Index first, Eigen::Index height) {
  if (first < 0 || height < 1 || first + height > a.rows())
    throw std::invalid_argument("slice_rows: range out of bounds");
  auto* an = a.node();
  auto* out = detail::make_node<S>(an->val.middleRows(first, height),
                                   an->requires_grad, nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, out, first, height] {
      if (!an->grad_ready) {
        an->grad = Mat<S>::Zero(an->val.rows(), an->val.cols());
        an->grad_ready = true;
      }
      an->grad.middleRows(first, height) += out->grad;
    };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rows() != rows)
      throw std::invalid_argument("concat_cols: row count mismatch");
    total += p.cols();
    rg |= p.requires_grad();
  }
  Mat<S> val(rows, total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    val.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  auto* out = detail::make_node<S>(std::move(val), rg, nullptr).node();
  if (out->requires_grad) {
    std::vector<TensorNode<S>*> ins;
    for (const auto& p : parts) ins.push_back(p.node());
    out->backward = [ins, out] {
      Eigen::Index at = 0;
      for (auto* n : ins) {
        n->accumulate(out->grad.middleCols(at, n->val.cols()));
        at += n->val.cols();
      }
    };
  }
  return Tensor<S>(out);
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.cols() != cols)
      throw std::invalid_argument("concat_rows: column count mismatch");
    total += p.rows();
    rg |= p.requires_grad();
  }
  Mat<S> val(total, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    val.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  auto* out = detail::make_node<S>(std::move(val), rg, nullptr).node();
  if (out->requires_grad) {
    std::vector<TensorNode<S>*> ins;
    for (const auto& p : parts) ins.push_back(p.node());
    out->backward = [ins, out] {
      Eigen::Index at = 0;
      for (auto* n : ins) {
        n->accumulate(out->grad.middleRows(at, n->val.rows()));
        at += n->val.rows();
      }
    };
  }
  return Tensor<S>(out);
}

/// Tile a 1 x h row m times.
template <class S>
Tensor<S> repeat_rows(Tensor<S> a, Eigen::Index m) {
  if (a.rows() != 1) throw std::invalid_argument("repeat_rows: expected one row");
  auto* an = a.node();
  auto* out = detail::make_node<S>(an->val.replicate(m, 1), an->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, out] {
      an->accumulate(out->grad.colwise().sum());
    };
  return Tensor<S>(out);
}

/// a (m x h) + bias row (1 x h) broadcast over rows.
template <class S>
Tensor<S> row_bias_add(Tensor<S> a, Tensor<S> bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw std::invalid_argument("row_bias_add: bias shape mismatch");
  auto* an = a.node();
  auto* bn = bias.node();
  Mat<S> val = an->val;
  val.rowwise() += bn->val.row(0);
  auto* out = detail::make_node<S>(std::move(val),
                                   an->requires_grad || bn->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, bn, out] {
      an->accumulate(out->grad);
      bn->accumulate(out->grad.colwise().sum());
    };
  return Tensor<S>(out);
}

/// Broadcast multiply: scalar (1x1) times matrix.
template <class S>
Tensor<S> bmul(Tensor<S> s, Tensor<S> m) {
  detail::check_scalar(s, "bmul");
  auto* sn = s.node();
  auto* mn = m.node();
  const S sv = sn->val(0, 0);
  auto* out = detail::make_node<S>(Mat<S>(sv * mn->val),
                                   sn->requires_grad || mn->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [sn, mn, out, sv] {
      if (sn->requires_grad)
        sn->accumulate(Mat<S>::Constant(
            1, 1, out->grad.cwiseProduct(mn->val).sum()));
      if (mn->requires_grad) mn->accumulate(sv * out->grad);
    };
  return Tensor<S>(out);
}

/// Broadcast add: matrix plus scalar (1x1) everywhere.
template <class S>
Tensor<S> badd(Tensor<S> s, Tensor<S> m) {
  detail::check_scalar(s, "badd");
  auto* sn = s.node();
  auto* mn = m.node();
  auto* out = detail::make_node<S>(Mat<S>(mn->val.array() + sn->val(0, 0)),
                                   sn->requires_grad || mn->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [sn, mn, out] {
      if (sn->requires_grad)
        sn->accumulate(Mat<S>::Constant(1, 1, out->grad.sum()));
      if (mn->requires_grad) mn->accumulate(out->grad);
    };
  return Tensor<S>(out);
}

/// K + s * I for square K and scalar s.
template <class S>
Tensor<S> add_scaled_identity(Tensor<S> k, Tensor<S> s) {
  if (k.rows() != k.cols())
    throw std::invalid_argument("add_scaled_identity: matrix must be square");
  detail::check_scalar(s, "add_scaled_identity");
  auto* kn = k.node();
  auto* sn = s.node();
  Mat<S> val = kn->val;
  val.diagonal().array() += sn->val(0, 0);
  auto* out = detail::make_node<S>(std::move(val),
                                   kn->requires_grad || sn->requires_grad,
                                   nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [kn, sn, out] {
      if (kn->requires_grad) kn->accumulate(out->grad);
      if (sn->requires_grad)
        sn->accumulate(Mat<S>::Constant(1, 1, out->grad.trace()));
    };
  return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

namespace detail {

template <class S, class F, class DF>
Tensor<S> unary_op(Tensor<S> a, F f, DF df) {
  auto* an = a.node();
  auto* out = detail::make_node<S>(Mat<S>(an->val.unaryExpr(f)),
                                   an->requires_grad, nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, out, df] {
      an->accumulate(out->grad.cwiseProduct(an->val.unaryExpr(df)));
    };
  return Tensor<S>(out);
}

}  // namespace detail

template <class S>
Tensor<S> exp(Tensor<S> a) {
  auto* an = a.node();
  auto* out = detail::make_node<S>(Mat<S>(an->val.array().exp()),
                                   an->requires_grad, nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, out] {
      an->accumulate(out->grad.cwiseProduct(out->val));
    };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> log(Tensor<S> a) {
  return detail::unary_op<S>(
      a, [](S x) { return std::log(x); }, [](S x) { return S(1) / x; });
}

template <class S>
Tensor<S> sin(Tensor<S> a) {
  return detail::unary_op<S>(
      a, [](S x) { return std::sin(x); }, [](S x) { return std::cos(x); });
}

template <class S>
Tensor<S> pow_const(Tensor<S> a, S p) {
  return detail::unary_op<S>(
      a, [p](S x) { return std::pow(x, p); },
      [p](S x) { return p * std::pow(x, p - S(1)); });
}

template <class S>
Tensor<S> square(Tensor<S> a) {
  return detail::unary_op<S>(
      a, [](S x) { return x * x; }, [](S x) { return S(2) * x; });
}

template <class S>
Tensor<S> gelu(Tensor<S> a) {
  constexpr S inv_sqrt2 = S(0.7071067811865475);
  constexpr S inv_sqrt2pi = S(0.3989422804014327);
  return detail::unary_op<S>(
      a,
      [=](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); },
      [=](S x) {
        const S cdf = S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
        const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * x * x);
        return cdf + x * pdf;
      });
}

template <class S>
Tensor<S> softplus(Tensor<S> a) {
  return detail::unary_op<S>(
      a,
      [](S x) { return x > S(30) ? x : std::log1p(std::exp(x)); },
      [](S x) { return S(1) / (S(1) + std::exp(-x)); });
}

// ---------------------------------------------------------------------------
// Reductions and row-structured ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum_all(Tensor<S> a) {
  auto* an = a.node();
  auto* out = detail::make_node<S>(Mat<S>::Constant(1, 1, an->val.sum()),
                                   an->requires_grad, nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, out] {
      an->accumulate(Mat<S>::Constant(an->val.rows(), an->val.cols(),
                                      out->grad(0, 0)));
    };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> mean_all(Tensor<S> a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.rows() * a.cols()));
}

/// Column-wise mean over rows: (m x h) -> (1 x h).
template <class S>
Tensor<S> mean_rows(Tensor<S> a) {
  auto* an = a.node();
  const S inv = S(1) / static_cast<S>(an->val.rows());
  auto* out = detail::make_node<S>(Mat<S>(an->val.colwise().mean()),
                                   an->requires_grad, nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [an, out, inv] {
      an->accumulate((inv * out->grad).replicate(an->val.rows(), 1));
    };
  return Tensor<S>(out);
}

template <class S>
Tensor<S> softmax_rows(Tensor<S> a) {
  auto* an = a.node();
  Mat<S> val = an->val;
  for (Eigen::Index r = 0; r < val.rows(); ++r) {
    const S mx = val.row(r).maxCoeff();
    val.row(r) = (val.row(r).array() - mx).exp();
    val.row(r) /= val.row(r).sum();
  }
  auto* out =
      detail::make_node<S>(std::move(val), an->requires_grad, nullptr).node();
  if (out->requires_grad)
    out->backward = [an, out] {
      Mat<S> g(out->grad.rows(), out->grad.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const S inner = out->grad.row(r).dot(out->val.row(r));
        g.row(r) = out->val.row(r).cwiseProduct(
            out->grad.row(r).array().operator-(inner).matrix());
      }
      an->accumulate(g);
    };
  return Tensor<S>(out);
}

/// Row-wise layer normalization with learned gain/bias (1 x h each).
template <class S>
Tensor<S> layer_norm_rows(Tensor<S> a, Tensor<S> gain, Tensor<S> bias,
                          S eps = S(1e-5)) {
  if (gain.rows() != 1 || gain.cols() != a.cols() || bias.rows() != 1 ||
      bias.cols() != a.cols())
    throw std::invalid_argument("layer_norm_rows: affine shape mismatch");
  auto* an = a.node();
  auto* gn = gain.node();
  auto* bn = bias.node();
  const Eigen::Index m = an->val.rows(), h = an->val.cols();
  Mat<S> xhat(m, h);
  Vec<S> inv_std(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const S mu = an->val.row(r).mean();
    const S var = (an->val.row(r).array() - mu).square().mean();
    inv_std(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (an->val.row(r).array() - mu) * inv_std(r);
  }
  Mat<S> val = xhat;
  for (Eigen::Index r = 0; r < m; ++r)
    val.row(r) = val.row(r).cwiseProduct(gn->val.row(0)) + bn->val.row(0);
  const bool rg =
      an->requires_grad || gn->requires_grad || bn->requires_grad;
  auto* out = detail::make_node<S>(std::move(val), rg, nullptr).node();
  if (out->requires_grad)
    out->backward = [an, gn, bn, out, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)] {
      const Eigen::Index m = out->grad.rows(), h = out->grad.cols();
      if (gn->requires_grad)
        gn->accumulate(out->grad.cwiseProduct(xhat).colwise().sum());
      if (bn->requires_grad) bn->accumulate(out->grad.colwise().sum());
      if (an->requires_grad) {
        Mat<S> gx(m, h);
        const S invh = S(1) / static_cast<S>(h);
        for (Eigen::Index r = 0; r < m; ++r) {
          const auto ghat =
              out->grad.row(r).cwiseProduct(gn->val.row(0));
          const S mean_g = ghat.mean();
          const S mean_gx = ghat.cwiseProduct(xhat.row(r)).sum() * invh;
          gx.row(r) = inv_std(r) *
                      (ghat.array() - mean_g - xhat.row(r).array() * mean_gx)
                          .matrix();
        }
        an->accumulate(gx);
      }
    };
  return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// Gaussian log-density of a zero-mean multivariate normal. The input matrix
// must already include the noise term; a jitter ladder relative to the given
// kernel-diagonal mean guards the factorization exactly like the float64 GP
// core. Gradient w.r.t. the covariance is 0.5 (alpha alpha^T - K^{-1}).
// ---------------------------------------------------------------------------

template <class S>
struct GaussLogPdfResult {
  Tensor<S> logpdf;
  double jitter = 0.0;
};

template <class S>
GaussLogPdfResult<S> gauss_logpdf_centered(Tensor<S> kn, const Vec<S>& y,
                                           double kernel_diag_mean) {
  if (kn.rows() != kn.cols() || kn.rows() != y.size())
    throw std::invalid_argument("gauss_logpdf_centered: shape mismatch");
  auto* knode = kn.node();
  const Eigen::Index n = y.size();

  Mat<S> L;
  double used_jitter = 0.0;
  bool ok = false;
  const double base = std::abs(kernel_diag_mean);
  for (int rung = -1; rung <= 6 && !ok; ++rung) {
    const double jitter = rung < 0 ? 0.0 : base * 1e-8 * std::pow(10.0, rung);
    Mat<S> A = knode->val;
    if (jitter > 0.0) A.diagonal().array() += static_cast<S>(jitter);
    Eigen::LLT<Mat<S>> llt(A);
    if (llt.info() == Eigen::Success) {
      L = llt.matrixL();
      used_jitter = jitter;
      ok = true;
    }
    if (base == 0.0 && rung >= 0) break;
  }
  if (!ok)
    throw NotPositiveDefinite(
        "covariance not positive definite after jitter escalation");

  Vec<S> alpha = L.transpose().template triangularView<Eigen::Upper>().solve(
      L.template triangularView<Eigen::Lower>().solve(y));
  const S logpdf = S(-0.5) * y.dot(alpha) -
                   L.diagonal().array().log().sum() -
                   S(0.5) * static_cast<S>(n) *
                       std::log(S(2) * std::numbers::pi_v<S>);

  auto* out = detail::make_node<S>(Mat<S>::Constant(1, 1, logpdf),
                                   knode->requires_grad, nullptr)
                  .node();
  if (out->requires_grad)
    out->backward = [knode, out, L = std::move(L), alpha = std::move(alpha)] {
      const Eigen::Index n = alpha.size();
      Mat<S> kinv = Mat<S>::Identity(n, n);
      L.template triangularView<Eigen::Lower>().solveInPlace(kinv);
      L.transpose().template triangularView<Eigen::Upper>().solveInPlace(kinv);
      Mat<S> b = S(0.5) * (alpha * alpha.transpose() - kinv);
      knode->accumulate(out->grad(0, 0) * b);
    };
  return {Tensor<S>(out), used_jitter};
}

}  // namespace amorgp
