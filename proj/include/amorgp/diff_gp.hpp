#pragma once

// Differentiable twin of the GP core: kernel matrices and the log marginal
// likelihood built as tensor graphs, so training and the classical baselines
// can take gradients through Eq.-style objectives. Values are cross-checked
// against gp.hpp in the test suite.

#include <vector>

#include <Eigen/Dense>

#include "amorgp/gp.hpp"
#include "amorgp/grammar.hpp"
#include "amorgp/tensor.hpp"

namespace amorgp {

/// Per-(dimension, addend) parameter rows (1 x arity), mirroring an
/// expression's shape, plus helpers to move between tensors and plain values.
template <class S>
using ParamTensors = std::vector<std::vector<Tensor<S>>>;

template <class S>
ParamAssignment param_tensors_to_assignment(const KernelExpression& expr,
                                            const ParamTensors<S>& theta,
                                            S noise_variance) {
  ParamAssignment out;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto& dim = out.values.emplace_back();
    for (std::size_t j = 0; j < theta[i].size(); ++j) {
      auto& vec = dim.emplace_back();
      const auto& row = theta[i][j].value();
      for (Eigen::Index k = 0; k < row.cols(); ++k)
        vec.push_back(static_cast<double>(row(0, k)));
    }
  }
  out.noise_variance = static_cast<double>(noise_variance);
  (void)expr;
  return out;
}

namespace detail {

template <class S>
struct DimIndexConsts {
  Tensor<S> sq_diff;   // (x - x')^2
  Tensor<S> abs_diff;  // |x - x'|
  Tensor<S> outer;     // x x'
};

template <class S>
DimIndexConsts<S> dim_consts(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::Index n = a.size(), m = b.size();
  const Eigen::MatrixXd diff = a * Eigen::RowVectorXd::Ones(m) -
                               Eigen::VectorXd::Ones(n) * b.transpose();
  DimIndexConsts<S> c;
  c.sq_diff = constant(Mat<S>(diff.array().square().matrix().cast<S>()));
  c.abs_diff = constant(Mat<S>(diff.array().abs().matrix().cast<S>()));
  c.outer = constant(Mat<S>((a * b.transpose()).cast<S>()));
  return c;
}

template <class S>
Tensor<S> theta_at(const Tensor<S>& row, int k) {
  return slice_cols(row, k, 1);
}

template <class S>
Tensor<S> se_term(Tensor<S> s2, Tensor<S> l, const DimIndexConsts<S>& c) {
  auto scaled = bmul(pow_const(l, S(-2)), c.sq_diff);
  return bmul(s2, amorgp::exp(scale(scaled, S(-0.5))));
}

template <class S>
Tensor<S> per_term(Tensor<S> s2, Tensor<S> p, Tensor<S> l,
                   const DimIndexConsts<S>& c) {
  auto phase = scale(bmul(pow_const(p, S(-1)), c.abs_diff),
                     std::numbers::pi_v<S>);
  auto s = square(amorgp::sin(phase));
  auto scaled = bmul(pow_const(l, S(-2)), s);
  return bmul(s2, amorgp::exp(scale(scaled, S(-0.5))));
}

template <class S>
Tensor<S> lin_term(Tensor<S> s2, Tensor<S> c2, const DimIndexConsts<S>& c) {
  return badd(c2, bmul(s2, c.outer));
}

template <class S>
Tensor<S> symbol_term(BaseSymbol sym, const Tensor<S>& row,
                      const DimIndexConsts<S>& c) {
  switch (sym) {
    case BaseSymbol::SE:
      return se_term(theta_at(row, 0), theta_at(row, 1), c);
    case BaseSymbol::LIN:
      return lin_term(theta_at(row, 0), theta_at(row, 1), c);
    case BaseSymbol::PER:
      return per_term(theta_at(row, 0), theta_at(row, 1), theta_at(row, 2), c);
    case BaseSymbol::SE_LIN:
      return mul(se_term(theta_at(row, 0), theta_at(row, 1), c),
                 lin_term(theta_at(row, 2), theta_at(row, 3), c));
    case BaseSymbol::SE_PER:
      return mul(se_term(theta_at(row, 0), theta_at(row, 1), c),
                 per_term(theta_at(row, 2), theta_at(row, 3),
                          theta_at(row, 4), c));
    case BaseSymbol::LIN_PER:
      return mul(lin_term(theta_at(row, 0), theta_at(row, 1), c),
                 per_term(theta_at(row, 2), theta_at(row, 3),
                          theta_at(row, 4), c));
  }
  throw std::invalid_argument("symbol_term: unknown symbol");
}

}  // namespace detail

/// k(X, X2) as a tensor graph over the parameter rows.
template <class S>
Tensor<S> diff_kernel_matrix(const KernelExpression& expr,
                             const ParamTensors<S>& theta,
                             const Eigen::MatrixXd& X,
                             const Eigen::MatrixXd& X2) {
  expr.validate();
  if (X.cols() != expr.d() || X2.cols() != expr.d())
    throw std::invalid_argument("diff_kernel_matrix: dimension mismatch");
  if (static_cast<int>(theta.size()) != expr.d())
    throw std::invalid_argument("diff_kernel_matrix: parameter shape mismatch");
  Tensor<S> K;
  for (int i = 0; i < expr.d(); ++i) {
    if (theta[i].size() != expr.dims[i].size())
      throw std::invalid_argument("diff_kernel_matrix: parameter shape mismatch");
    const auto consts = detail::dim_consts<S>(X.col(i), X2.col(i));
    Tensor<S> dim_sum;
    for (std::size_t j = 0; j < expr.dims[i].size(); ++j) {
      auto term = detail::symbol_term(expr.dims[i][j], theta[i][j], consts);
      dim_sum = dim_sum.valid() ? add(dim_sum, term) : term;
    }
    K = K.valid() ? mul(K, dim_sum) : dim_sum;
  }
  return K;
}

/// log N(y; 0, K + sigma2 I) with the same jitter ladder as the float64 core.
template <class S>
Tensor<S> diff_log_marginal(const KernelExpression& expr,
                            const ParamTensors<S>& theta, Tensor<S> sigma2,
                            const Dataset& data) {
  auto K = diff_kernel_matrix<S>(expr, theta, data.X, data.X);
  const double diag_mean =
      static_cast<double>(K.value().diagonal().mean());
  auto Kn = add_scaled_identity(K, sigma2);
  const Vec<S> y = data.y.cast<S>();
  return gauss_logpdf_centered(Kn, y, diag_mean).logpdf;
}

}  // namespace amorgp
