#pragma once

// Hierarchical sampling distribution over (dataset, expression) pairs:
// dimensions and addend counts from geometric distributions, base symbols
// uniform, hyperparameters from Gamma/Exponential priors, inputs uniform on
// [0,1]^d and targets drawn from the induced GP. Supports positive pairs
// (dataset generated by the labeled expression) and negative pairs (dataset
// generated by an independently drawn expression).

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <json.hpp>

#include "amorgp/binio.hpp"
#include "amorgp/errors.hpp"
#include "amorgp/gp.hpp"
#include "amorgp/grammar.hpp"
#include "amorgp/rng.hpp"

namespace amorgp {

struct PriorSpec {
  // Gamma prior on variances, offsets and periods; separate Gamma on
  // lengthscales; Exponential on the noise variance.
  double variance_shape = 2.0;
  double variance_rate = 3.0;
  double lengthscale_shape = 2.0;
  double lengthscale_rate = 5.0;
  double noise_rate = 1.0 / (0.15 * 0.15);
  // Gamma numbers above read as shape/rate; set false to read them as
  // shape/scale instead.
  bool gamma_as_shape_rate = true;

  double effective_rate(double rate_or_scale) const {
    return gamma_as_shape_rate ? rate_or_scale : 1.0 / rate_or_scale;
  }
};

struct SamplerConfig {
  int n_min = 10;
  int n_max = 250;
  int d_max = 8;
  double dim_geometric_p = 0.25;
  double addend_geometric_p = 0.6;
  double negative_fraction = 0.5;
  PriorSpec priors;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (n_min < 1 || n_max < n_min)
      throw std::invalid_argument("sampler: empty n range");
    if (d_max < 1) throw std::invalid_argument("sampler: d_max must be >= 1");
    const auto in_unit = [](double p) { return p > 0.0 && p < 1.0; };
    if (!in_unit(dim_geometric_p) || !in_unit(addend_geometric_p))
      throw std::invalid_argument("sampler: geometric p must be in (0,1)");
    if (negative_fraction < 0.0 || negative_fraction > 1.0)
      throw std::invalid_argument("sampler: negative_fraction must be in [0,1]");
  }
};

inline nlohmann::json sampler_config_to_json(const SamplerConfig& c) {
  return nlohmann::json{
      {"n_min", c.n_min},
      {"n_max", c.n_max},
      {"d_max", c.d_max},
      {"dim_geometric_p", c.dim_geometric_p},
      {"addend_geometric_p", c.addend_geometric_p},
      {"negative_fraction", c.negative_fraction},
      {"rng_seed", c.rng_seed},
      {"priors",
       {{"variance_shape", c.priors.variance_shape},
        {"variance_rate", c.priors.variance_rate},
        {"lengthscale_shape", c.priors.lengthscale_shape},
        {"lengthscale_rate", c.priors.lengthscale_rate},
        {"noise_rate", c.priors.noise_rate},
        {"gamma_as_shape_rate", c.priors.gamma_as_shape_rate}}}};
}

inline SamplerConfig sampler_config_from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.n_min = j.value("n_min", c.n_min);
  c.n_max = j.value("n_max", c.n_max);
  c.d_max = j.value("d_max", c.d_max);
  c.dim_geometric_p = j.value("dim_geometric_p", c.dim_geometric_p);
  c.addend_geometric_p = j.value("addend_geometric_p", c.addend_geometric_p);
  c.negative_fraction = j.value("negative_fraction", c.negative_fraction);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  if (j.contains("priors")) {
    const auto& p = j.at("priors");
    c.priors.variance_shape = p.value("variance_shape", c.priors.variance_shape);
    c.priors.variance_rate = p.value("variance_rate", c.priors.variance_rate);
    c.priors.lengthscale_shape =
        p.value("lengthscale_shape", c.priors.lengthscale_shape);
    c.priors.lengthscale_rate =
        p.value("lengthscale_rate", c.priors.lengthscale_rate);
    c.priors.noise_rate = p.value("noise_rate", c.priors.noise_rate);
    c.priors.gamma_as_shape_rate =
        p.value("gamma_as_shape_rate", c.priors.gamma_as_shape_rate);
  }
  c.validate();
  return c;
}

enum class PairMode : std::uint8_t { positive = 0, negative = 1 };

struct TrainingPair {
  Dataset data;
  KernelExpression expr;            // the label handed to the network
  KernelExpression generator_expr;  // what actually generated the targets
  ParamAssignment true_params;      // shaped by generator_expr
  PairMode mode = PairMode::positive;
};

/// One hyperparameter draw for the given role.
inline double sample_param(ParamRole role, Rng& rng, const PriorSpec& prior) {
  switch (role) {
    case ParamRole::Lengthscale:
      return rng.gamma(prior.lengthscale_shape,
                       prior.effective_rate(prior.lengthscale_rate));
    case ParamRole::Variance:
    case ParamRole::Offset:
    case ParamRole::Period:
      return rng.gamma(prior.variance_shape,
                       prior.effective_rate(prior.variance_rate));
  }
  throw std::invalid_argument("sample_param: unknown role");
}

/// Log prior density of a kernel parameter (for MAP estimation).
inline double log_prior_pdf(ParamRole role, double value,
                            const PriorSpec& prior) {
  double shape, rate;
  if (role == ParamRole::Lengthscale) {
    shape = prior.lengthscale_shape;
    rate = prior.effective_rate(prior.lengthscale_rate);
  } else {
    shape = prior.variance_shape;
    rate = prior.effective_rate(prior.variance_rate);
  }
  return shape * std::log(rate) - std::lgamma(shape) +
         (shape - 1.0) * std::log(value) - rate * value;
}

inline double log_noise_prior_pdf(double sigma2, const PriorSpec& prior) {
  return std::log(prior.noise_rate) - prior.noise_rate * sigma2;
}

/// N_i ~ Geometric(addend_p) addends per dimension, symbols uniform over the
/// corpus.
inline KernelExpression sample_expression(int d, Rng& rng,
                                          double addend_p = 0.6) {
  if (d < 1) throw std::invalid_argument("sample_expression: d must be >= 1");
  KernelExpression expr;
  expr.dims.resize(d);
  for (auto& addends : expr.dims) {
    const int count = rng.geometric(addend_p);
    addends.reserve(count);
    for (int j = 0; j < count; ++j)
      addends.push_back(kAllBaseSymbols[rng.uniform_int(0, kNumBaseSymbols - 1)]);
  }
  return expr;
}

inline ParamAssignment sample_params(const KernelExpression& expr, Rng& rng,
                                     const PriorSpec& prior = {}) {
  ParamAssignment out;
  for (const auto& addends : expr.dims) {
    auto& dim = out.values.emplace_back();
    for (BaseSymbol s : addends) {
      auto& vec = dim.emplace_back();
      for (ParamRole role : param_roles(s))
        vec.push_back(sample_param(role, rng, prior));
    }
  }
  out.noise_variance = rng.exponential(prior.noise_rate);
  return out;
}

/// Number of input dimensions: Geometric(dim_p) clipped to [1, d_max].
inline int sample_dimension(const SamplerConfig& cfg, Rng& rng) {
  return std::min(rng.geometric(cfg.dim_geometric_p), cfg.d_max);
}

/// X uniform on [0,1]^{n x d}, then y ~ N(0, K + sigma^2 I) via Cholesky.
inline Dataset sample_dataset_from(const KernelExpression& expr,
                                   const ParamAssignment& params, int n,
                                   Rng& rng) {
  Dataset data;
  data.X.resize(n, expr.d());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < expr.d(); ++c) data.X(r, c) = rng.uniform();
  const Eigen::MatrixXd K = kernel_matrix(expr, params, data.X, data.X);
  Eigen::MatrixXd Kn = K;
  Kn.diagonal().array() += params.noise_variance;
  const auto chol = cholesky_with_jitter(Kn, K.diagonal().mean());
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z(i) = rng.normal();
  data.y = chol.L * z;
  return data;
}

/// Draw one training pair. Order of draws is fixed for reproducibility:
/// d, n, mode, expression(s), then parameters and targets with bounded
/// retries on Cholesky failure.
inline TrainingPair sample_pair(const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  TrainingPair pair;
  const int d = sample_dimension(cfg, rng);
  const int n = rng.uniform_int(cfg.n_min, cfg.n_max);
  const bool negative = rng.uniform() < cfg.negative_fraction;
  pair.mode = negative ? PairMode::negative : PairMode::positive;
  pair.expr = sample_expression(d, rng, cfg.addend_geometric_p);
  pair.generator_expr =
      negative ? sample_expression(d, rng, cfg.addend_geometric_p) : pair.expr;

  constexpr int kMaxRetries = 20;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    pair.true_params = sample_params(pair.generator_expr, rng, cfg.priors);
    try {
      pair.data = sample_dataset_from(pair.generator_expr, pair.true_params, n, rng);
      return pair;
    } catch (const NotPositiveDefinite&) {
      continue;  // resample parameters
    }
  }
  throw NotPositiveDefinite(
      "sample_pair: covariance stayed indefinite after parameter resampling");
}

// ---------------------------------------------------------------------------
// Cached pair files: versioned binary records, little-endian float64 arrays.
// ---------------------------------------------------------------------------

inline constexpr char kPairFileMagic[] = "AMGPPAIR";
inline constexpr std::uint32_t kPairFileVersion = 1;

inline void save_pairs(const std::string& path,
                       const std::vector<TrainingPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open pair file for writing: " + path);
  out.write(kPairFileMagic, 8);
  detail::write_pod<std::uint32_t>(out, kPairFileVersion);
  detail::write_pod<std::uint64_t>(out, pairs.size());
  for (const auto& p : pairs) {
    detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(p.mode));
    detail::write_string(out, expression_to_json(p.expr).dump());
    detail::write_string(out, expression_to_json(p.generator_expr).dump());
    const auto flat = p.true_params.flatten();
    detail::write_pod<std::uint64_t>(out, flat.size());
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(sizeof(double) * flat.size()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.data.n()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.data.d()));
    out.write(reinterpret_cast<const char*>(p.data.X.data()),
              static_cast<std::streamsize>(sizeof(double) * p.data.X.size()));
    out.write(reinterpret_cast<const char*>(p.data.y.data()),
              static_cast<std::streamsize>(sizeof(double) * p.data.y.size()));
  }
  if (!out) throw std::runtime_error("pair file: write failed: " + path);
}

inline std::vector<TrainingPair> load_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open pair file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != kPairFileMagic)
    throw std::runtime_error("pair file: bad magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kPairFileVersion)
    throw std::runtime_error("pair file: unsupported version");
  const auto count = detail::read_pod<std::uint64_t>(in);
  std::vector<TrainingPair> pairs;
  pairs.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    TrainingPair p;
    p.mode = static_cast<PairMode>(detail::read_pod<std::uint8_t>(in));
    p.expr = expression_from_json(nlohmann::json::parse(detail::read_string(in)));
    p.generator_expr =
        expression_from_json(nlohmann::json::parse(detail::read_string(in)));
    const auto len = detail::read_pod<std::uint64_t>(in);
    std::vector<double> flat(len);
    in.read(reinterpret_cast<char*>(flat.data()),
            static_cast<std::streamsize>(sizeof(double) * len));
    p.true_params = ParamAssignment::unflatten(p.generator_expr, flat);
    const auto n = detail::read_pod<std::uint32_t>(in);
    const auto d = detail::read_pod<std::uint32_t>(in);
    p.data.X.resize(n, d);
    in.read(reinterpret_cast<char*>(p.data.X.data()),
            static_cast<std::streamsize>(sizeof(double) * p.data.X.size()));
    p.data.y.resize(n);
    in.read(reinterpret_cast<char*>(p.data.y.data()),
            static_cast<std::streamsize>(sizeof(double) * p.data.y.size()));
    if (!in) throw std::runtime_error("pair file: truncated");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace amorgp
