#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "amorgp/gp.hpp"
#include "amorgp/rng.hpp"
#include "test_util.hpp"

using namespace amorgp;

namespace {

ParamAssignment single_symbol_params(std::vector<double> p, double noise) {
  ParamAssignment out;
  out.values = {{std::move(p)}};
  out.noise_variance = noise;
  return out;
}

}  // namespace

TEST_CASE("base kernel values at hand points", "[gp]") {
  const double se0 =
      kernel_value(BaseSymbol::SE, std::vector<double>{2.0, 1.0}, 0.7, 0.7);
  REQUIRE(se0 == Catch::Approx(2.0).margin(1e-15));

  const double per =
      kernel_value(BaseSymbol::PER, std::vector<double>{1.0, 0.5, 1.0}, 0.1, 0.6);
  REQUIRE(per == Catch::Approx(1.0).margin(1e-12));

  const double lin =
      kernel_value(BaseSymbol::LIN, std::vector<double>{1.0, 0.25}, 0.0, 3.0);
  REQUIRE(lin == Catch::Approx(0.25).margin(1e-15));

  REQUIRE_THROWS_AS(
      kernel_value(BaseSymbol::SE, std::vector<double>{1.0}, 0.0, 0.0),
      std::invalid_argument);
}

TEST_CASE("two-gram kernels multiply their constituents", "[gp]") {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const double x = rng.uniform(), x2 = rng.uniform();
    const double s2a = rng.uniform(0.3, 2.0), la = rng.uniform(0.3, 2.0);
    const double s2b = rng.uniform(0.3, 2.0), c2 = rng.uniform(0.3, 2.0);
    const double combined = kernel_value(
        BaseSymbol::SE_LIN, std::vector<double>{s2a, la, s2b, c2}, x, x2);
    const double parts =
        kernel_value(BaseSymbol::SE, std::vector<double>{s2a, la}, x, x2) *
        kernel_value(BaseSymbol::LIN, std::vector<double>{s2b, c2}, x, x2);
    REQUIRE(combined == Catch::Approx(parts).epsilon(1e-12));
  }
}

TEST_CASE("kernel_matrix agrees with the scalar loop oracle", "[gp]") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = rng.uniform_int(1, 3);
    const auto expr = testutil::random_expression(rng, d);
    const auto params = testutil::random_params(expr, rng);
    const auto A = testutil::random_dataset(rng, rng.uniform_int(2, 7), d);
    const auto B = testutil::random_dataset(rng, rng.uniform_int(2, 7), d);
    const Eigen::MatrixXd K = kernel_matrix(expr, params, A.X, B.X);
    const Eigen::MatrixXd Kref = testutil::loop_kernel_matrix(expr, params, A.X, B.X);
    REQUIRE((K - Kref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("kernel_matrix on one input set is symmetric", "[gp]") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = rng.uniform_int(1, 3);
    const auto expr = testutil::random_expression(rng, d);
    const auto params = testutil::random_params(expr, rng);
    const auto data = testutil::random_dataset(rng, 6, d);
    const Eigen::MatrixXd K = kernel_matrix(expr, params, data.X, data.X);
    REQUIRE((K - K.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("product of per-dimension SE matrices", "[gp]") {
  Rng rng(13);
  KernelExpression expr{{{BaseSymbol::SE}, {BaseSymbol::SE}}};
  ParamAssignment params;
  params.values = {{{1.0, 0.7}}, {{1.0, 1.3}}};
  params.noise_variance = 0.1;
  const auto data = testutil::random_dataset(rng, 8, 2);
  const Eigen::MatrixXd K = kernel_matrix(expr, params, data.X, data.X);

  KernelExpression one_d{{{BaseSymbol::SE}}};
  ParamAssignment pa = single_symbol_params({1.0, 0.7}, 0.1);
  ParamAssignment pb = single_symbol_params({1.0, 1.3}, 0.1);
  const Eigen::MatrixXd Ka = kernel_matrix(one_d, pa, data.X.col(0), data.X.col(0));
  const Eigen::MatrixXd Kb = kernel_matrix(one_d, pb, data.X.col(1), data.X.col(1));
  REQUIRE((K - Ka.cwiseProduct(Kb)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single-point kernel matrix is the product of addend sums", "[gp]") {
  KernelExpression expr{{{BaseSymbol::SE, BaseSymbol::LIN}}};
  ParamAssignment params;
  params.values = {{{2.0, 1.0}, {1.0, 0.5}}};
  params.noise_variance = 0.1;
  Eigen::MatrixXd X(1, 1);
  X << 0.4;
  const Eigen::MatrixXd K = kernel_matrix(expr, params, X, X);
  REQUIRE(K.rows() == 1);
  // SE at zero distance gives 2.0; LIN gives 1*0.16 + 0.5.
  REQUIRE(K(0, 0) == Catch::Approx(2.0 + 0.16 + 0.5).epsilon(1e-12));
}

TEST_CASE("scalar log marginal likelihood cases", "[gp]") {
  KernelExpression expr{{{BaseSymbol::SE}}};
  Dataset data;
  data.X = Eigen::MatrixXd::Constant(1, 1, 0.3);
  data.y = Eigen::VectorXd::Zero(1);
  const auto params = single_symbol_params({1.0, 1.0}, 0.5);
  const double v = 1.5;  // sigma_k^2 + sigma^2 at zero distance
  const double expected0 = -0.5 * std::log(2.0 * std::numbers::pi * v);
  REQUIRE(log_marginal_likelihood(expr, params, data) ==
          Catch::Approx(expected0).margin(1e-12));

  data.y(0) = 1.0;
  const double expected1 = expected0 - 1.0 / (2.0 * v);
  REQUIRE(log_marginal_likelihood(expr, params, data) ==
          Catch::Approx(expected1).margin(1e-12));
}

TEST_CASE("log marginal likelihood matches the dense oracle", "[gp]") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = rng.uniform_int(1, 3);
    const auto expr = testutil::random_expression(rng, d);
    const auto params = testutil::random_params(expr, rng);
    const auto data = testutil::random_dataset(rng, rng.uniform_int(1, 8), d);
    const double got = log_marginal_likelihood(expr, params, data);
    const double want = testutil::dense_log_marginal(expr, params, data);
    REQUIRE(std::abs(got - want) < 1e-8);
  }
}

TEST_CASE("log marginal likelihood is permutation invariant", "[gp]") {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = rng.uniform_int(1, 3);
    const auto expr = testutil::random_expression(rng, d);
    const auto params = testutil::random_params(expr, rng);
    auto data = testutil::random_dataset(rng, 12, d);
    const double base = log_marginal_likelihood(expr, params, data);

    std::vector<int> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 11; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    Dataset shuffled;
    shuffled.X.resize(12, d);
    shuffled.y.resize(12);
    for (int i = 0; i < 12; ++i) {
      shuffled.X.row(i) = data.X.row(perm[i]);
      shuffled.y(i) = data.y(perm[i]);
    }
    REQUIRE(std::abs(log_marginal_likelihood(expr, params, shuffled) - base) <
            1e-10);
  }
}

TEST_CASE("posterior prediction matches the dense oracle", "[gp]") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = rng.uniform_int(1, 2);
    const auto expr = testutil::random_expression(rng, d);
    const auto params = testutil::random_params(expr, rng);
    const auto train = testutil::random_dataset(rng, rng.uniform_int(2, 8), d);
    const auto test = testutil::random_dataset(rng, 4, d);
    GPPosterior post(expr, params, train);
    const auto [mean, var] = post.predict(test.X);
    const auto [mref, vref] = testutil::dense_predict(expr, params, train, test.X);
    REQUIRE((mean - mref).cwiseAbs().maxCoeff() < 1e-8);
    REQUIRE((var - vref).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("posterior interpolates as noise vanishes", "[gp]") {
  Rng rng(24);
  KernelExpression expr{{{BaseSymbol::SE}}};
  Dataset train;  // well-separated points keep K comfortably conditioned
  train.X.resize(4, 1);
  train.X << 0.05, 0.35, 0.65, 0.95;
  train.y.resize(4);
  for (int i = 0; i < 4; ++i) train.y(i) = rng.normal();
  const auto params = single_symbol_params({1.5, 0.2}, 1e-9);
  GPPosterior post(expr, params, train);
  const auto [mean, var] = post.predict(train.X);
  REQUIRE((mean - train.y).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("far from data an SE posterior reverts to the prior", "[gp]") {
  Rng rng(25);
  KernelExpression expr{{{BaseSymbol::SE}}};
  auto train = testutil::random_dataset(rng, 10, 1);
  const double s2 = 1.7, noise = 0.3;
  const auto params = single_symbol_params({s2, 0.5}, noise);
  GPPosterior post(expr, params, train);
  Eigen::MatrixXd far(1, 1);
  far << 100.0;
  const auto [mean, var] = post.predict(far);
  REQUIRE(std::abs(mean(0)) < 1e-8);
  REQUIRE(var(0) == Catch::Approx(s2 + noise).margin(1e-8));
}

TEST_CASE("posterior prediction is invariant to training permutation", "[gp]") {
  Rng rng(26);
  const auto expr = testutil::random_expression(rng, 2);
  const auto params = testutil::random_params(expr, rng);
  auto train = testutil::random_dataset(rng, 15, 2);
  const auto test = testutil::random_dataset(rng, 5, 2);
  GPPosterior post(expr, params, train);
  const auto [mean, var] = post.predict(test.X);

  Dataset shuffled = train;
  for (int i = 14; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    shuffled.X.row(i).swap(shuffled.X.row(j));
    std::swap(shuffled.y(i), shuffled.y(j));
  }
  GPPosterior post2(expr, params, shuffled);
  const auto [mean2, var2] = post2.predict(test.X);
  REQUIRE((mean - mean2).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((var - var2).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("metrics on hand cases and against the scalar oracle", "[gp]") {
  Rng rng(27);
  KernelExpression expr{{{BaseSymbol::SE}}};
  auto train = testutil::random_dataset(rng, 8, 1);
  const auto params = single_symbol_params({1.0, 1.0}, 0.2);
  GPPosterior post(expr, params, train);

  Dataset test = testutil::random_dataset(rng, 6, 1);
  const auto [mean, var] = post.predict(test.X);

  SECTION("perfect mean with unit variance") {
    // rmse 0 and nll = 0.5 log(2 pi) when mean == y and var == 1
    double nll = 0.0;
    for (int i = 0; i < test.n(); ++i)
      nll += testutil::scalar_gauss_nll(1.0, 1.0, 1.0);
    REQUIRE(nll / test.n() ==
            Catch::Approx(0.5 * std::log(2.0 * std::numbers::pi)).margin(1e-12));
  }

  SECTION("unit offset case") {
    const double nll = testutil::scalar_gauss_nll(1.0, 0.0, 1.0);
    REQUIRE(nll == Catch::Approx(0.5 * std::log(2.0 * std::numbers::pi) + 0.5)
                       .margin(1e-12));
  }

  SECTION("library metrics equal the scalar oracle") {
    const Metrics m = metrics(post, test);
    double rmse2 = 0.0, nll = 0.0;
    for (int i = 0; i < test.n(); ++i) {
      rmse2 += (mean(i) - test.y(i)) * (mean(i) - test.y(i));
      nll += testutil::scalar_gauss_nll(test.y(i), mean(i), var(i));
    }
    REQUIRE(m.rmse == Catch::Approx(std::sqrt(rmse2 / test.n())).epsilon(1e-12));
    REQUIRE(m.nll == Catch::Approx(nll / test.n()).epsilon(1e-12));
  }

  SECTION("empty test set is rejected") {
    Dataset empty;
    empty.X.resize(0, 1);
    empty.y.resize(0);
    REQUIRE_THROWS_AS(metrics(post, empty), std::invalid_argument);
  }
}

TEST_CASE("cholesky jitter ladder rescues a singular matrix", "[gp]") {
  // Exactly rank-one, so the unjittered factorization must fail.
  const Eigen::MatrixXd Kn = Eigen::MatrixXd::Ones(3, 3);
  const auto chol = cholesky_with_jitter(Kn, 1.0);
  REQUIRE(chol.jitter > 0.0);
  // Reconstruction differs from Kn by exactly the added jitter.
  const Eigen::MatrixXd R = chol.L * chol.L.transpose();
  REQUIRE((R - Kn).cwiseAbs().maxCoeff() <= chol.jitter + 1e-8);

  // An indefinite matrix stays unfactorizable through the whole ladder.
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
  bad(1, 1) = -1.0;
  REQUIRE_THROWS_AS(cholesky_with_jitter(bad, 1e-6), NotPositiveDefinite);
}

TEST_CASE("alpha reproduces targets through the factored system", "[gp]") {
  Rng rng(28);
  const auto expr = testutil::random_expression(rng, 2);
  const auto params = testutil::random_params(expr, rng);
  const auto train = testutil::random_dataset(rng, 10, 2);
  GPPosterior post(expr, params, train);
  Eigen::MatrixXd Kn = kernel_matrix(expr, params, train.X, train.X);
  Kn.diagonal().array() += params.noise_variance;
  const Eigen::VectorXd back = Kn * post.alpha();
  REQUIRE((back - train.y).norm() / train.y.norm() < 1e-8);
}

TEST_CASE("dataset validation rejects bad shapes and values", "[gp]") {
  Dataset d;
  d.X.resize(0, 1);
  d.y.resize(0);
  REQUIRE_THROWS_AS(d.validate(), std::invalid_argument);
  d.X = Eigen::MatrixXd::Zero(2, 1);
  d.y = Eigen::VectorXd::Zero(3);
  REQUIRE_THROWS_AS(d.validate(), std::invalid_argument);
  d.y = Eigen::VectorXd::Zero(2);
  d.X(0, 0) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(d.validate(), std::invalid_argument);
}
