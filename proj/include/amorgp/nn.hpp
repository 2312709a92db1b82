#pragma once

// Network building blocks on top of the tensor engine: linear layers, MLPs
// with GELU, layer norm, multi-head self-attention, transformer encoder
// blocks (post-norm, no positional encoding, no dropout) and the
// kernel-encoder layer whose element-wise MLP receives a concatenated
// context vector.

#include <cmath>
#include <string>
#include <vector>

#include "amorgp/rng.hpp"
#include "amorgp/tensor.hpp"

namespace amorgp::nn {

namespace detail {

// Scaled-uniform fan-in init, entries drawn row-major for a fixed draw order.
template <class S>
Mat<S> uniform_fan_in(Rng& rng, int rows, int cols, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Mat<S> m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = static_cast<S>(rng.uniform(-bound, bound));
  return m;
}

}  // namespace detail

template <class S>
struct Linear {
  Tensor<S> weight;  // in x out
  Tensor<S> bias;    // 1 x out

  static Linear init(ParamStore<S>& store, const std::string& name, int in,
                     int out, Rng& rng) {
    Linear l;
    l.weight = store.add(name + ".weight",
                         detail::uniform_fan_in<S>(rng, in, out, in));
    l.bias =
        store.add(name + ".bias", detail::uniform_fan_in<S>(rng, 1, out, in));
    return l;
  }

  Tensor<S> operator()(Tensor<S> x) const {
    return row_bias_add(matmul(x, weight), bias);
  }
};

template <class S>
struct LayerNorm {
  Tensor<S> gain;
  Tensor<S> bias;
  S eps = S(1e-5);

  static LayerNorm init(ParamStore<S>& store, const std::string& name,
                        int width) {
    LayerNorm n;
    n.gain = store.add(name + ".gain", Mat<S>::Ones(1, width));
    n.bias = store.add(name + ".bias", Mat<S>::Zero(1, width));
    return n;
  }

  Tensor<S> operator()(Tensor<S> x) const {
    return layer_norm_rows(x, gain, bias, eps);
  }
};

/// Linear stack with GELU between layers (none after the last).
template <class S>
struct Mlp {
  std::vector<Linear<S>> layers;

  static Mlp init(ParamStore<S>& store, const std::string& name,
                  const std::vector<int>& dims, Rng& rng) {
    if (dims.size() < 2)
      throw std::invalid_argument("Mlp: need at least input and output dims");
    Mlp m;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      m.layers.push_back(Linear<S>::init(
          store, name + ".fc" + std::to_string(i), dims[i], dims[i + 1], rng));
    return m;
  }

  Tensor<S> operator()(Tensor<S> x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = gelu(x);
    }
    return x;
  }
};

/// Standard scaled dot-product multi-head self-attention over a sequence of
/// row vectors. No mask, no dropout, no positional encoding.
template <class S>
struct MultiHeadSelfAttention {
  Linear<S> wq, wk, wv, wo;
  int num_heads = 1;

  static MultiHeadSelfAttention init(ParamStore<S>& store,
                                     const std::string& name, int embed_dim,
                                     int heads, Rng& rng) {
    if (heads < 1 || embed_dim % heads != 0)
      throw std::invalid_argument(
          "MultiHeadSelfAttention: embed_dim must be divisible by num_heads");
    MultiHeadSelfAttention a;
    a.num_heads = heads;
    a.wq = Linear<S>::init(store, name + ".wq", embed_dim, embed_dim, rng);
    a.wk = Linear<S>::init(store, name + ".wk", embed_dim, embed_dim, rng);
    a.wv = Linear<S>::init(store, name + ".wv", embed_dim, embed_dim, rng);
    a.wo = Linear<S>::init(store, name + ".wo", embed_dim, embed_dim, rng);
    return a;
  }

  Tensor<S> operator()(Tensor<S> x) const {
    const Eigen::Index h = x.cols();
    const Eigen::Index dh = h / num_heads;
    const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
    auto q = wq(x);
    auto k = wk(x);
    auto v = wv(x);
    std::vector<Tensor<S>> heads;
    heads.reserve(num_heads);
    for (int i = 0; i < num_heads; ++i) {
      auto qh = slice_cols(q, i * dh, dh);
      auto kh = slice_cols(k, i * dh, dh);
      auto vh = slice_cols(v, i * dh, dh);
      auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      heads.push_back(matmul(softmax_rows(scores), vh));
    }
    return wo(concat_cols(heads));
  }
};

/// One transformer encoder sublayer, post-norm:
///   x = LN(x + MHSA(x)); x = LN(x + MLP(x)).
template <class S>
struct EncoderLayer {
  MultiHeadSelfAttention<S> attn;
  Mlp<S> mlp;
  LayerNorm<S> norm1, norm2;

  static EncoderLayer init(ParamStore<S>& store, const std::string& name,
                           int embed_dim, int mlp_hidden, int heads, Rng& rng) {
    EncoderLayer l;
    l.attn = MultiHeadSelfAttention<S>::init(store, name + ".attn", embed_dim,
                                             heads, rng);
    l.mlp = Mlp<S>::init(store, name + ".mlp",
                         {embed_dim, mlp_hidden, embed_dim}, rng);
    l.norm1 = LayerNorm<S>::init(store, name + ".ln1", embed_dim);
    l.norm2 = LayerNorm<S>::init(store, name + ".ln2", embed_dim);
    return l;
  }

  Tensor<S> operator()(Tensor<S> x) const {
    x = norm1(add(x, attn(x)));
    x = norm2(add(x, mlp(x)));
    return x;
  }
};

/// Encoder part of the transformer: a stack of EncoderLayers.
template <class S>
struct TransformerBlock {
  std::vector<EncoderLayer<S>> layers;

  static TransformerBlock init(ParamStore<S>& store, const std::string& name,
                               int embed_dim, int mlp_hidden, int num_layers,
                               int heads, Rng& rng) {
    TransformerBlock b;
    for (int i = 0; i < num_layers; ++i)
      b.layers.push_back(EncoderLayer<S>::init(
          store, name + ".layer" + std::to_string(i), embed_dim, mlp_hidden,
          heads, rng));
    return b;
  }

  Tensor<S> operator()(Tensor<S> x) const {
    for (const auto& l : layers) x = l(x);
    return x;
  }
};

/// Kernel-Encoder-Block: MHSA, residual + norm, then an element-wise MLP that
/// sees the context vector appended to every row, residual + norm again.
template <class S>
struct KernelEncoderLayer {
  MultiHeadSelfAttention<S> attn;
  Mlp<S> mlp;  // (embed + context) -> hidden -> embed
  LayerNorm<S> norm1, norm2;

  static KernelEncoderLayer init(ParamStore<S>& store, const std::string& name,
                                 int embed_dim, int context_dim, int mlp_hidden,
                                 int heads, Rng& rng) {
    KernelEncoderLayer l;
    l.attn = MultiHeadSelfAttention<S>::init(store, name + ".attn", embed_dim,
                                             heads, rng);
    l.mlp = Mlp<S>::init(store, name + ".mlp",
                         {embed_dim + context_dim, mlp_hidden, embed_dim}, rng);
    l.norm1 = LayerNorm<S>::init(store, name + ".ln1", embed_dim);
    l.norm2 = LayerNorm<S>::init(store, name + ".ln2", embed_dim);
    return l;
  }

  Tensor<S> operator()(Tensor<S> v, Tensor<S> context) const {
    if (context.rows() != 1)
      throw std::invalid_argument("KernelEncoderLayer: context must be one row");
    auto vbar = norm1(add(v, attn(v)));
    auto with_ctx =
        concat_cols<S>({vbar, repeat_rows(context, vbar.rows())});
    return norm2(add(vbar, mlp(with_ctx)));
  }
};

/// Stack of KernelEncoderLayers sharing one context vector.
template <class S>
struct KernelEncoderStack {
  std::vector<KernelEncoderLayer<S>> layers;

  static KernelEncoderStack init(ParamStore<S>& store, const std::string& name,
                                 int embed_dim, int context_dim, int mlp_hidden,
                                 int num_layers, int heads, Rng& rng) {
    KernelEncoderStack s;
    for (int i = 0; i < num_layers; ++i)
      s.layers.push_back(KernelEncoderLayer<S>::init(
          store, name + ".layer" + std::to_string(i), embed_dim, context_dim,
          mlp_hidden, heads, rng));
    return s;
  }

  Tensor<S> operator()(Tensor<S> v, Tensor<S> context) const {
    for (const auto& l : layers) v = l(v, context);
    return v;
  }
};

}  // namespace amorgp::nn
