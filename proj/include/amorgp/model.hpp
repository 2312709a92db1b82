#pragma once

// The amortization network g(D, S) -> (theta_S, sigma^2).
//
// Dataset encoder: per-dimension (x, y) pairs through a shared linear layer
// and a shared transformer, mean-aggregated across dimensions into datapoint
// embeddings, a transformer over datapoints, concatenation back onto the
// per-dimension sequences (doubling the width), another shared transformer,
// mean aggregation over datapoints and a final transformer across dimensions.
//
// Kernel encoder-decoder: one-hot symbol rows embedded to the kernel width,
// a kernel-encoder stack with the dimension embedding as context, mean
// aggregation to per-dimension kernel embeddings, a transformer across
// dimensions, then a second kernel-encoder stack whose context is the
// concatenation of dimension embedding and global kernel embedding.
//
// Output layer: one MLP head per base symbol mapping each kernel embedding
// to its parameter space through a softplus floor, plus a noise head on the
// concatenated global means of dimension and kernel embeddings.

#include <array>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "amorgp/checkpoint.hpp"
#include "amorgp/diff_gp.hpp"
#include "amorgp/gp.hpp"
#include "amorgp/grammar.hpp"
#include "amorgp/nn.hpp"
#include "amorgp/rng.hpp"
#include "amorgp/tensor.hpp"

namespace amorgp {

struct ModelConfig {
  int h = 32;          // width of encoder blocks 1-2; blocks 3-4 run at 2h
  int num_heads = 4;
  int enc_layers = 2;  // layers per dataset-encoder transformer block
  int enc_mlp_hidden_h = 0;    // defaults to 2h
  int enc_mlp_hidden_2h = 0;   // defaults to 2h
  int kernel_width = 0;        // defaults to 2h
  int ked_layers = 2;          // layers per kernel-encoder stack
  int ked_tf_layers = 2;       // layers in the KED transformer block
  int ked_mlp_hidden = 0;      // defaults to 2 * kernel_width
  int head_hidden = 64;
  int noise_hidden1 = 64;
  int noise_hidden2 = 32;
  double positivity_floor = 1e-6;

  void apply_defaults() {
    if (enc_mlp_hidden_h == 0) enc_mlp_hidden_h = 2 * h;
    if (enc_mlp_hidden_2h == 0) enc_mlp_hidden_2h = 2 * h;
    if (kernel_width == 0) kernel_width = 2 * h;
    if (ked_mlp_hidden == 0) ked_mlp_hidden = 2 * kernel_width;
  }

  void validate() const {
    if (h < 1 || kernel_width < 1) throw std::invalid_argument("bad widths");
    if (h % num_heads != 0 || (2 * h) % num_heads != 0 ||
        kernel_width % num_heads != 0)
      throw std::invalid_argument(
          "embedding widths must be divisible by num_heads");
  }

  /// Small preset for tests and CPU-scale training runs.
  static ModelConfig desk() {
    ModelConfig c;
    c.apply_defaults();
    return c;
  }

  /// Full-size preset mirroring the published configuration tables.
  static ModelConfig paper() {
    ModelConfig c;
    c.h = 256;
    c.num_heads = 8;
    c.enc_layers = 4;
    c.enc_mlp_hidden_h = 512;
    c.enc_mlp_hidden_2h = 512;
    c.kernel_width = 512;
    c.ked_layers = 3;
    c.ked_tf_layers = 4;
    c.ked_mlp_hidden = 1024;
    c.head_hidden = 200;
    c.noise_hidden1 = 200;
    c.noise_hidden2 = 100;
    return c;
  }

  static ModelConfig tiny() {  // gradient-check scale
    ModelConfig c;
    c.h = 8;
    c.num_heads = 2;
    c.enc_layers = 1;
    c.ked_layers = 1;
    c.ked_tf_layers = 1;
    c.head_hidden = 8;
    c.noise_hidden1 = 8;
    c.noise_hidden2 = 4;
    c.apply_defaults();
    return c;
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"h", c.h},
                        {"num_heads", c.num_heads},
                        {"enc_layers", c.enc_layers},
                        {"enc_mlp_hidden_h", c.enc_mlp_hidden_h},
                        {"enc_mlp_hidden_2h", c.enc_mlp_hidden_2h},
                        {"kernel_width", c.kernel_width},
                        {"ked_layers", c.ked_layers},
                        {"ked_tf_layers", c.ked_tf_layers},
                        {"ked_mlp_hidden", c.ked_mlp_hidden},
                        {"head_hidden", c.head_hidden},
                        {"noise_hidden1", c.noise_hidden1},
                        {"noise_hidden2", c.noise_hidden2},
                        {"positivity_floor", c.positivity_floor}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.h = j.at("h");
  c.num_heads = j.at("num_heads");
  c.enc_layers = j.at("enc_layers");
  c.enc_mlp_hidden_h = j.at("enc_mlp_hidden_h");
  c.enc_mlp_hidden_2h = j.at("enc_mlp_hidden_2h");
  c.kernel_width = j.at("kernel_width");
  c.ked_layers = j.at("ked_layers");
  c.ked_tf_layers = j.at("ked_tf_layers");
  c.ked_mlp_hidden = j.at("ked_mlp_hidden");
  c.head_hidden = j.at("head_hidden");
  c.noise_hidden1 = j.at("noise_hidden1");
  c.noise_hidden2 = j.at("noise_hidden2");
  c.positivity_floor = j.at("positivity_floor");
  c.apply_defaults();
  c.validate();
  return c;
}

/// Named preset lookup used by config files and the CLI.
inline ModelConfig model_config_preset(const std::string& name) {
  if (name == "desk") return ModelConfig::desk();
  if (name == "paper") return ModelConfig::paper();
  if (name == "tiny") return ModelConfig::tiny();
  throw std::invalid_argument("unknown model preset '" + name + "'");
}

template <class S>
class AmortizationModel {
 public:
  AmortizationModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.apply_defaults();
    cfg_.validate();
    Rng rng(seed);
    const int h = cfg_.h, h2 = 2 * cfg_.h, kw = cfg_.kernel_width;
    input_embed_ = nn::Linear<S>::init(params_, "dataset_encoder.embed", 2, h, rng);
    enc1_ = nn::TransformerBlock<S>::init(params_, "dataset_encoder.block1", h,
                                          cfg_.enc_mlp_hidden_h,
                                          cfg_.enc_layers, cfg_.num_heads, rng);
    enc2_ = nn::TransformerBlock<S>::init(params_, "dataset_encoder.block2", h,
                                          cfg_.enc_mlp_hidden_h,
                                          cfg_.enc_layers, cfg_.num_heads, rng);
    enc3_ = nn::TransformerBlock<S>::init(params_, "dataset_encoder.block3", h2,
                                          cfg_.enc_mlp_hidden_2h,
                                          cfg_.enc_layers, cfg_.num_heads, rng);
    enc4_ = nn::TransformerBlock<S>::init(params_, "dataset_encoder.block4", h2,
                                          cfg_.enc_mlp_hidden_2h,
                                          cfg_.enc_layers, cfg_.num_heads, rng);
    symbol_embed_ = nn::Linear<S>::init(params_, "kernel_encoder.embed",
                                        kNumBaseSymbols, kw, rng);
    ked1_ = nn::KernelEncoderStack<S>::init(params_, "kernel_encoder.stack1",
                                            kw, h2, cfg_.ked_mlp_hidden,
                                            cfg_.ked_layers, cfg_.num_heads, rng);
    ked_tf_ = nn::TransformerBlock<S>::init(params_, "kernel_encoder.block", kw,
                                            cfg_.ked_mlp_hidden,
                                            cfg_.ked_tf_layers, cfg_.num_heads,
                                            rng);
    ked2_ = nn::KernelEncoderStack<S>::init(params_, "kernel_encoder.stack2",
                                            kw, h2 + kw, cfg_.ked_mlp_hidden,
                                            cfg_.ked_layers, cfg_.num_heads, rng);
    for (int s = 0; s < kNumBaseSymbols; ++s) {
      const auto sym = kAllBaseSymbols[s];
      heads_[s] = nn::Mlp<S>::init(
          params_, std::string("head.") + std::string(symbol_name(sym)),
          {kw, cfg_.head_hidden, arity(sym)}, rng);
    }
    noise_head_ = nn::Mlp<S>::init(
        params_, "head.noise",
        {h2 + kw, cfg_.noise_hidden1, cfg_.noise_hidden2, 1}, rng);
  }

  AmortizationModel(const AmortizationModel&) = delete;
  AmortizationModel& operator=(const AmortizationModel&) = delete;
  AmortizationModel(AmortizationModel&&) = default;
  AmortizationModel& operator=(AmortizationModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  /// Steps 1-9; returns the d x 2h dimension embeddings. Needs an active tape.
  Tensor<S> dataset_encode(const Dataset& data) const {
    data.validate();
    const int n = data.n(), d = data.d();
    std::vector<Tensor<S>> per_dim_step3;
    per_dim_step3.reserve(d);
    for (int i = 0; i < d; ++i) {
      Mat<S> pairs(n, 2);
      pairs.col(0) = data.X.col(i).cast<S>();
      pairs.col(1) = data.y.cast<S>();
      auto embedded = input_embed_(constant(pairs));
      per_dim_step3.push_back(enc1_(embedded));
    }
    auto datapoint_mean = scale(add_n(per_dim_step3), S(1) / static_cast<S>(d));
    auto datapoint_emb = enc2_(datapoint_mean);
    std::vector<Tensor<S>> per_dim_rows;
    per_dim_rows.reserve(d);
    for (int i = 0; i < d; ++i) {
      auto widened = concat_cols<S>({datapoint_emb, per_dim_step3[i]});
      per_dim_rows.push_back(mean_rows(enc3_(widened)));
    }
    return enc4_(concat_rows(per_dim_rows));
  }

  /// KED steps 1-4 given the dimension embeddings; returns one N_i x kw
  /// matrix per dimension, mirroring the expression.
  std::vector<Tensor<S>> kernel_encode_decode(
      Tensor<S> dim_embeddings, const KernelExpression& expr) const {
    expr.validate();
    const int d = expr.d();
    if (dim_embeddings.rows() != d)
      throw std::invalid_argument(
          "kernel_encode_decode: dimension count mismatch");
    const auto one_hot = encode_one_hot(expr);
    std::vector<Tensor<S>> step1;
    step1.reserve(d);
    for (int i = 0; i < d; ++i) {
      Mat<S> hot(one_hot[i].size(), kNumBaseSymbols);
      for (std::size_t j = 0; j < one_hot[i].size(); ++j)
        for (int k = 0; k < kNumBaseSymbols; ++k)
          hot(j, k) = static_cast<S>(one_hot[i][j][k]);
      auto embedded = symbol_embed_(constant(hot));
      step1.push_back(ked1_(embedded, slice_rows(dim_embeddings, i, 1)));
    }
    std::vector<Tensor<S>> dim_kernel_rows;
    dim_kernel_rows.reserve(d);
    for (int i = 0; i < d; ++i) dim_kernel_rows.push_back(mean_rows(step1[i]));
    auto global = ked_tf_(concat_rows(dim_kernel_rows));
    std::vector<Tensor<S>> out;
    out.reserve(d);
    for (int i = 0; i < d; ++i) {
      auto context = concat_cols<S>(
          {slice_rows(dim_embeddings, i, 1), slice_rows(global, i, 1)});
      out.push_back(ked2_(step1[i], context));
    }
    return out;
  }

  struct Prediction {
    ParamTensors<S> theta;  // per (dim, addend): 1 x arity, positive
    Tensor<S> sigma2;       // 1 x 1, positive
  };

  /// Full forward pass as a tensor graph (for training); needs an active tape.
  Prediction predict_params_t(const Dataset& data,
                              const KernelExpression& expr) const {
    if (data.d() != expr.d())
      throw std::invalid_argument("predict_params: dimension mismatch");
    auto dim_emb = dataset_encode(data);
    auto kernel_emb = kernel_encode_decode(dim_emb, expr);
    return output_heads(dim_emb, kernel_emb, expr);
  }

  /// Output layer alone; reused by the batched ensemble path.
  Prediction output_heads(Tensor<S> dim_embeddings,
                          const std::vector<Tensor<S>>& kernel_embeddings,
                          const KernelExpression& expr) const {
    const S floor = static_cast<S>(cfg_.positivity_floor);
    Prediction pred;
    for (int i = 0; i < expr.d(); ++i) {
      auto& dim = pred.theta.emplace_back();
      for (std::size_t j = 0; j < expr.dims[i].size(); ++j) {
        const auto sym = expr.dims[i][j];
        auto emb = slice_rows(kernel_embeddings[i], j, 1);
        auto raw = heads_[static_cast<int>(sym)](emb);
        dim.push_back(add_const(softplus(raw), floor));
      }
    }
    auto global_kernel = mean_rows(concat_rows(kernel_embeddings));
    auto global_data = mean_rows(dim_embeddings);
    auto noise_raw = noise_head_(concat_cols<S>({global_data, global_kernel}));
    pred.sigma2 = add_const(softplus(noise_raw), floor);
    return pred;
  }

  /// Convenience inference entry point: runs on a private tape without
  /// gradient bookkeeping and returns plain values.
  ParamAssignment predict_params(const Dataset& data,
                                 const KernelExpression& expr) const {
    Tape<S> tape;
    TapeScope<S> scope(tape);
    NoGradScope no_grad;
    const auto pred = predict_params_t(data, expr);
    return param_tensors_to_assignment(expr, pred.theta,
                                       pred.sigma2.scalar());
  }

  /// Wall time in seconds of one forward pass on a synthetic input with n
  /// datapoints, d dimensions and l addends per dimension.
  double forward_cost_probe(int n, int d, int l,
                            std::uint64_t seed = 0xC0FFEE) const {
    Rng rng(seed);
    Dataset data;
    data.X.resize(n, d);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c) data.X(r, c) = rng.uniform();
    data.y.resize(n);
    for (int r = 0; r < n; ++r) data.y(r) = rng.normal();
    KernelExpression expr;
    expr.dims.resize(d);
    for (auto& addends : expr.dims)
      for (int j = 0; j < l; ++j)
        addends.push_back(kAllBaseSymbols[j % kNumBaseSymbols]);
    const auto start = std::chrono::steady_clock::now();
    (void)predict_params(data, expr);
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(stop - start).count();
  }

 private:
  ModelConfig cfg_;
  ParamStore<S> params_;
  nn::Linear<S> input_embed_;
  nn::TransformerBlock<S> enc1_, enc2_, enc3_, enc4_;
  nn::Linear<S> symbol_embed_;
  nn::KernelEncoderStack<S> ked1_, ked2_;
  nn::TransformerBlock<S> ked_tf_;
  std::array<nn::Mlp<S>, kNumBaseSymbols> heads_;
  nn::Mlp<S> noise_head_;
};

// ---------------------------------------------------------------------------
// Checkpoint wiring: the architecture config travels in the container header
// and is version-checked on load.
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

template <class S>
void save_model(const std::string& path, const AmortizationModel<S>& model,
                nlohmann::json extra_meta = nlohmann::json::object()) {
  CheckpointData data;
  data.meta = std::move(extra_meta);
  data.meta["model_format"] = kModelFormatVersion;
  data.meta["config"] = model_config_to_json(model.config());
  data.meta["scalar"] = std::is_same_v<S, float> ? "f32" : "f64";
  dump_params(data, model.params());
  save_checkpoint(path, data);
}

template <class S>
AmortizationModel<S> load_model(const std::string& path,
                                nlohmann::json* meta_out = nullptr) {
  const auto data = load_checkpoint(path);
  if (!data.meta.contains("model_format") ||
      data.meta.at("model_format").get<int>() != kModelFormatVersion)
    throw std::runtime_error("checkpoint: unsupported model format in " + path);
  const auto cfg = model_config_from_json(data.meta.at("config"));
  AmortizationModel<S> model(cfg, /*seed=*/0);
  fill_params(model.params(), data);
  if (meta_out) *meta_out = data.meta;
  return model;
}

}  // namespace amorgp
