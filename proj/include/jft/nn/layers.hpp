#pragma once

#include <concepts>
#include <cstddef>
#include <type_traits>
#include <string>
#include <vector>

#include "jft/autograd/tensor.hpp"
#include "jft/util/rng.hpp"

namespace jft::nn {

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
};

// Per-head projections are stored side by side: head i uses columns
// [i*head_width, (i+1)*head_width) of wq/wk/wv and rows of wo. No biases.
struct MhaParams {
  Tensor wq;  // [d, h*d_h]
  Tensor wk;
  Tensor wv;
  Tensor wo;  // [h*d_h, d]
  std::size_t heads = 1;

  std::size_t width() const { return wq.dim(0); }
  std::size_t head_width() const { return wq.dim(1) / heads; }
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct TransformerBlockParams {
  LayerNormParams norm1;
  MhaParams attention;
  LayerNormParams norm2;
  LinearParams expand;    // [d, 4d]
  LinearParams contract;  // [4d, d]
};

struct ConvParams {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
};

inline constexpr std::size_t kFeedForwardRatio = 4;

// Glorot-uniform weights, zero biases, unit LN scale.
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng);
MhaParams init_mha(std::size_t width, std::size_t heads, Rng& rng);
LayerNormParams init_layer_norm(std::size_t width);
TransformerBlockParams init_transformer_block(std::size_t width, std::size_t heads, Rng& rng);
ConvParams init_conv(std::size_t in_channels, std::size_t out_channels, std::size_t ksize, Rng& rng);

// x [..., in] -> [..., out]
Tensor linear_forward(const Tensor& x, const LinearParams& p);

struct MhaOutput {
  Tensor output;   // same shape as the input
  Tensor mixed;    // heads concatenated, before the output projection
  Tensor weights;  // post-softmax attention, [h,n,n] or [b,h,n,n]; not differentiable
};

// Scaled dot-product self-attention, scale 1/sqrt(d_h). x is [n,d] or [b,n,d].
MhaOutput multi_head_attention(const Tensor& x, const MhaParams& p);

// Pre-norm block: h = x + MHA(LN1(x)); out = h + FFN(LN2(h)), ReLU inside the FFN.
Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p);

// conv2d -> ReLU -> 2x2 maxpool. img is [c,h,w] or [b,c,h,w].
Tensor conv_block(const Tensor& img, const ConvParams& p);

// Visits every parameter tensor as f(name, tensor) with dotted names. Works
// on const and mutable parameter sets. The order is fixed and is the order
// used by optimizers and checkpoints.
template <class P, class T>
concept ParamsOf = std::same_as<std::remove_cvref_t<P>, T>;

template <ParamsOf<LinearParams> P, class F>
void visit(P&& p, const std::string& prefix, F&& f) {
  f(prefix + "weight", p.weight);
  f(prefix + "bias", p.bias);
}

template <ParamsOf<MhaParams> P, class F>
void visit(P&& p, const std::string& prefix, F&& f) {
  f(prefix + "wq", p.wq);
  f(prefix + "wk", p.wk);
  f(prefix + "wv", p.wv);
  f(prefix + "wo", p.wo);
}

template <ParamsOf<LayerNormParams> P, class F>
void visit(P&& p, const std::string& prefix, F&& f) {
  f(prefix + "gamma", p.gamma);
  f(prefix + "beta", p.beta);
}

template <ParamsOf<TransformerBlockParams> P, class F>
void visit(P&& p, const std::string& prefix, F&& f) {
  visit(p.norm1, prefix + "norm1.", f);
  visit(p.attention, prefix + "attention.", f);
  visit(p.norm2, prefix + "norm2.", f);
  visit(p.expand, prefix + "expand.", f);
  visit(p.contract, prefix + "contract.", f);
}

template <ParamsOf<ConvParams> P, class F>
void visit(P&& p, const std::string& prefix, F&& f) {
  f(prefix + "weight", p.weight);
  f(prefix + "bias", p.bias);
}

// Total scalar parameters, counted recursively.
template <class P>
std::size_t param_count(const P& p) {
  std::size_t n = 0;
  visit(p, "", [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

}  // namespace jft::nn
