#pragma once

// Exact GP regression math for the structured kernel space: kernel matrices,
// Cholesky-based log marginal likelihood, posterior prediction and the
// RMSE/NLL scoring used throughout the evaluation harness. Everything here is
// plain float64 linear algebra; the differentiable twin used for training
// lives in diff_gp.hpp and is cross-checked against this implementation.

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "amorgp/errors.hpp"
#include "amorgp/grammar.hpp"

namespace amorgp {

struct Dataset {
  Eigen::MatrixXd X;  // n x d inputs
  Eigen::VectorXd y;  // n targets

  int n() const { return static_cast<int>(X.rows()); }
  int d() const { return static_cast<int>(X.cols()); }

  void validate() const {
    if (X.rows() < 1 || X.cols() < 1)
      throw std::invalid_argument("dataset needs n >= 1 and d >= 1");
    if (y.size() != X.rows())
      throw std::invalid_argument("dataset target length must match inputs");
    if (!X.allFinite() || !y.allFinite())
      throw std::invalid_argument("dataset contains non-finite entries");
  }
};

/// Structured hyperparameters mirroring a KernelExpression, plus the
/// likelihood noise variance. values[i][j] holds the parameter vector of the
/// j-th addend acting on dimension i, in the canonical per-symbol order.
struct ParamAssignment {
  std::vector<std::vector<std::vector<double>>> values;
  double noise_variance = 0.0;

  void validate_against(const KernelExpression& expr) const {
    if (values.size() != expr.dims.size())
      throw std::invalid_argument("parameter shape does not match expression");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].size() != expr.dims[i].size())
        throw std::invalid_argument("parameter shape does not match expression");
      for (std::size_t j = 0; j < values[i].size(); ++j) {
        if (static_cast<int>(values[i][j].size()) != arity(expr.dims[i][j]))
          throw std::invalid_argument("parameter arity mismatch at (" +
                                      std::to_string(i) + "," +
                                      std::to_string(j) + ")");
        for (double v : values[i][j])
          if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument("kernel parameters must be positive");
      }
    }
    if (!(noise_variance > 0.0) || !std::isfinite(noise_variance))
      throw std::invalid_argument("noise variance must be positive");
  }

  /// Flat view in expression order (row-major over dims, addends, slots);
  /// the noise variance is appended last.
  std::vector<double> flatten() const {
    std::vector<double> flat;
    for (const auto& dim : values)
      for (const auto& vec : dim) flat.insert(flat.end(), vec.begin(), vec.end());
    flat.push_back(noise_variance);
    return flat;
  }

  static ParamAssignment unflatten(const KernelExpression& expr,
                                   const std::vector<double>& flat) {
    ParamAssignment out;
    std::size_t k = 0;
    for (const auto& addends : expr.dims) {
      auto& dim = out.values.emplace_back();
      for (BaseSymbol s : addends) {
        auto& vec = dim.emplace_back();
        for (int a = 0; a < arity(s); ++a) {
          if (k >= flat.size())
            throw std::invalid_argument("flat parameter vector too short");
          vec.push_back(flat[k++]);
        }
      }
    }
    if (k + 1 != flat.size())
      throw std::invalid_argument("flat parameter vector length mismatch");
    out.noise_variance = flat[k];
    return out;
  }
};

// ---------------------------------------------------------------------------
// Base kernels, in the kernel-grammar parameterization: every base kernel in
// every dimension owns its variance.
//   k_SE(x,x')  = s2 * exp(-(x-x')^2 / (2 l^2))
//   k_PER(x,x') = s2 * exp(-sin^2(pi |x-x'| / p) / (2 l^2))
//   k_LIN(x,x') = s2 * x x' + c2
// Two-gram symbols multiply their constituents.
// ---------------------------------------------------------------------------

namespace detail {

inline double se_scalar(double s2, double l, double x, double x2) {
  const double r = x - x2;
  return s2 * std::exp(-0.5 * r * r / (l * l));
}

inline double per_scalar(double s2, double p, double l, double x, double x2) {
  const double s = std::sin(std::numbers::pi * std::abs(x - x2) / p);
  return s2 * std::exp(-0.5 * s * s / (l * l));
}

inline double lin_scalar(double s2, double c2, double x, double x2) {
  return s2 * x * x2 + c2;
}

}  // namespace detail

inline double kernel_value(BaseSymbol sym, std::span<const double> params,
                           double x, double x2) {
  if (static_cast<int>(params.size()) != arity(sym))
    throw std::invalid_argument("kernel_value: parameter arity mismatch");
  using namespace detail;
  switch (sym) {
    case BaseSymbol::SE: return se_scalar(params[0], params[1], x, x2);
    case BaseSymbol::LIN: return lin_scalar(params[0], params[1], x, x2);
    case BaseSymbol::PER:
      return per_scalar(params[0], params[1], params[2], x, x2);
    case BaseSymbol::SE_LIN:
      return se_scalar(params[0], params[1], x, x2) *
             lin_scalar(params[2], params[3], x, x2);
    case BaseSymbol::SE_PER:
      return se_scalar(params[0], params[1], x, x2) *
             per_scalar(params[2], params[3], params[4], x, x2);
    case BaseSymbol::LIN_PER:
      return lin_scalar(params[0], params[1], x, x2) *
             per_scalar(params[2], params[3], params[4], x, x2);
  }
  throw std::invalid_argument("kernel_value: unknown symbol");
}

namespace detail {

// Vectorized base-kernel matrix over two coordinate vectors of one dimension.
inline Eigen::ArrayXXd base_matrix(BaseSymbol sym, std::span<const double> p,
                                   const Eigen::ArrayXd& a,
                                   const Eigen::ArrayXd& b) {
  const Eigen::Index n = a.size(), m = b.size();
  const auto diff = [&] {
    return (a.matrix() * Eigen::RowVectorXd::Ones(m) -
            Eigen::VectorXd::Ones(n) * b.matrix().transpose())
        .array();
  };
  switch (sym) {
    case BaseSymbol::SE: {
      const Eigen::ArrayXXd d = diff();
      return p[0] * (-0.5 * d.square() / (p[1] * p[1])).exp();
    }
    case BaseSymbol::LIN: {
      const Eigen::ArrayXXd outer =
          (a.matrix() * b.matrix().transpose()).array();
      return p[0] * outer + p[1];
    }
    case BaseSymbol::PER: {
      const Eigen::ArrayXXd d = diff();
      const Eigen::ArrayXXd s = (std::numbers::pi * d.abs() / p[1]).sin();
      return p[0] * (-0.5 * s.square() / (p[2] * p[2])).exp();
    }
    case BaseSymbol::SE_LIN:
      return base_matrix(BaseSymbol::SE, p.subspan(0, 2), a, b) *
             base_matrix(BaseSymbol::LIN, p.subspan(2, 2), a, b);
    case BaseSymbol::SE_PER:
      return base_matrix(BaseSymbol::SE, p.subspan(0, 2), a, b) *
             base_matrix(BaseSymbol::PER, p.subspan(2, 3), a, b);
    case BaseSymbol::LIN_PER:
      return base_matrix(BaseSymbol::LIN, p.subspan(0, 2), a, b) *
             base_matrix(BaseSymbol::PER, p.subspan(2, 3), a, b);
  }
  throw std::invalid_argument("base_matrix: unknown symbol");
}

}  // namespace detail

/// Cross-covariance matrix k(X, X2); entry (r, c) multiplies per-dimension
/// sums of base kernels evaluated at (X(r, i), X2(c, i)).
inline Eigen::MatrixXd kernel_matrix(const KernelExpression& expr,
                                     const ParamAssignment& params,
                                     const Eigen::MatrixXd& X,
                                     const Eigen::MatrixXd& X2) {
  expr.validate();
  params.validate_against(expr);
  if (X.cols() != expr.d() || X2.cols() != expr.d())
    throw std::invalid_argument("kernel_matrix: input dimension mismatch");
  Eigen::ArrayXXd K = Eigen::ArrayXXd::Ones(X.rows(), X2.rows());
  for (int i = 0; i < expr.d(); ++i) {
    const Eigen::ArrayXd a = X.col(i).array();
    const Eigen::ArrayXd b = X2.col(i).array();
    Eigen::ArrayXXd dim_sum = Eigen::ArrayXXd::Zero(X.rows(), X2.rows());
    for (std::size_t j = 0; j < expr.dims[i].size(); ++j)
      dim_sum += detail::base_matrix(expr.dims[i][j], params.values[i][j], a, b);
    K *= dim_sum;
  }
  return K.matrix();
}

/// Diagonal of k(X, X) without forming the full matrix.
inline Eigen::VectorXd kernel_diagonal(const KernelExpression& expr,
                                       const ParamAssignment& params,
                                       const Eigen::MatrixXd& X) {
  Eigen::ArrayXd diag = Eigen::ArrayXd::Ones(X.rows());
  for (int i = 0; i < expr.d(); ++i) {
    Eigen::ArrayXd dim_sum = Eigen::ArrayXd::Zero(X.rows());
    for (std::size_t j = 0; j < expr.dims[i].size(); ++j)
      for (Eigen::Index r = 0; r < X.rows(); ++r)
        dim_sum[r] += kernel_value(expr.dims[i][j], params.values[i][j],
                                   X(r, i), X(r, i));
    diag *= dim_sum;
  }
  return diag.matrix();
}

struct CholeskyFactor {
  Eigen::MatrixXd L;    // lower triangular
  double jitter = 0.0;  // diagonal boost that was needed
};

/// Factorizes Kn (already including the noise term) with an escalating jitter
/// ladder: 0, then 1e-8 * mean(diag K) growing tenfold up to 1e-2 * mean(diag K).
inline CholeskyFactor cholesky_with_jitter(const Eigen::MatrixXd& Kn,
                                           double kernel_diag_mean) {
  const double base = std::abs(kernel_diag_mean);
  for (int rung = -1; rung <= 6; ++rung) {
    const double jitter = rung < 0 ? 0.0 : base * 1e-8 * std::pow(10.0, rung);
    Eigen::MatrixXd A = Kn;
    if (jitter > 0.0) A.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success)
      return {Eigen::MatrixXd(llt.matrixL()), jitter};
    if (base == 0.0) break;  // no scale to escalate against
  }
  throw NotPositiveDefinite(
      "covariance matrix not positive definite after jitter escalation");
}

/// Log marginal likelihood log N(y; 0, K + sigma^2 I) via Cholesky.
inline double log_marginal_likelihood(const KernelExpression& expr,
                                      const ParamAssignment& params,
                                      const Dataset& data) {
  data.validate();
  if (data.d() != expr.d())
    throw std::invalid_argument("log_marginal_likelihood: dimension mismatch");
  const Eigen::MatrixXd K = kernel_matrix(expr, params, data.X, data.X);
  Eigen::MatrixXd Kn = K;
  Kn.diagonal().array() += params.noise_variance;
  const auto chol = cholesky_with_jitter(Kn, K.diagonal().mean());
  const Eigen::VectorXd alpha = chol.L.transpose().triangularView<Eigen::Upper>().solve(
      chol.L.triangularView<Eigen::Lower>().solve(data.y));
  const double n = static_cast<double>(data.n());
  return -0.5 * data.y.dot(alpha) -
         chol.L.diagonal().array().log().sum() -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

/// Read-only posterior over a training set; shareable across threads.
class GPPosterior {
 public:
  GPPosterior(KernelExpression expr, ParamAssignment params, Dataset train)
      : expr_(std::move(expr)),
        params_(std::move(params)),
        train_(std::move(train)) {
    train_.validate();
    if (train_.d() != expr_.d())
      throw std::invalid_argument("GPPosterior: dimension mismatch");
    const Eigen::MatrixXd K = kernel_matrix(expr_, params_, train_.X, train_.X);
    Eigen::MatrixXd Kn = K;
    Kn.diagonal().array() += params_.noise_variance;
    chol_ = cholesky_with_jitter(Kn, K.diagonal().mean());
    alpha_ = chol_.L.transpose().triangularView<Eigen::Upper>().solve(
        chol_.L.triangularView<Eigen::Lower>().solve(train_.y));
    const double n = static_cast<double>(train_.n());
    log_ml_ = -0.5 * train_.y.dot(alpha_) -
              chol_.L.diagonal().array().log().sum() -
              0.5 * n * std::log(2.0 * std::numbers::pi);
  }

  const KernelExpression& expr() const { return expr_; }
  const ParamAssignment& params() const { return params_; }
  const Dataset& train() const { return train_; }
  double log_marginal() const { return log_ml_; }
  const Eigen::VectorXd& alpha() const { return alpha_; }
  const Eigen::MatrixXd& chol_lower() const { return chol_.L; }

  /// Predictive mean and variance at Xstar; the variance includes the
  /// observation noise so NLL scores noisy targets.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> predict(
      const Eigen::MatrixXd& Xstar) const {
    if (Xstar.cols() != expr_.d())
      throw std::invalid_argument("predict: dimension mismatch");
    const Eigen::MatrixXd Ks =
        kernel_matrix(expr_, params_, train_.X, Xstar);       // n x m
    const Eigen::VectorXd mean = Ks.transpose() * alpha_;     // m
    const Eigen::MatrixXd V =
        chol_.L.triangularView<Eigen::Lower>().solve(Ks);     // n x m
    const Eigen::VectorXd kss = kernel_diagonal(expr_, params_, Xstar);
    Eigen::VectorXd var =
        (kss.array() - V.array().square().colwise().sum().transpose() +
         params_.noise_variance)
            .matrix();
    var = var.cwiseMax(1e-12);
    return {mean, var};
  }

 private:
  KernelExpression expr_;
  ParamAssignment params_;
  Dataset train_;
  CholeskyFactor chol_;
  Eigen::VectorXd alpha_;
  double log_ml_ = 0.0;
};

struct Metrics {
  double rmse = 0.0;
  double nll = 0.0;
};

inline Metrics metrics(const GPPosterior& post, const Dataset& test) {
  if (test.n() < 1) throw std::invalid_argument("metrics: empty test set");
  test.validate();
  const auto [mean, var] = post.predict(test.X);
  const Eigen::ArrayXd err = (mean - test.y).array();
  Metrics m;
  m.rmse = std::sqrt(err.square().mean());
  m.nll = (0.5 * (2.0 * std::numbers::pi * var.array()).log() +
           err.square() / (2.0 * var.array()))
              .mean();
  return m;
}

}  // namespace amorgp
