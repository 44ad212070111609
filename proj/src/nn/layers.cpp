#include "jft/nn/layers.hpp"

#include <cmath>
#include <string>

#include "jft/autograd/ops.hpp"

namespace jft::nn {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v));
}

LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng) {
  return {glorot_uniform({in, out}, in, out, rng), Tensor::zeros({out})};
}

MhaParams init_mha(std::size_t width, std::size_t heads, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("attention width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  MhaParams p;
  p.heads = heads;
  p.wq = glorot_uniform({width, width}, width, width, rng);
  p.wk = glorot_uniform({width, width}, width, width, rng);
  p.wv = glorot_uniform({width, width}, width, width, rng);
  p.wo = glorot_uniform({width, width}, width, width, rng);
  return p;
}

LayerNormParams init_layer_norm(std::size_t width) {
  return {Tensor::full({width}, 1.0), Tensor::zeros({width})};
}

TransformerBlockParams init_transformer_block(std::size_t width, std::size_t heads, Rng& rng) {
  TransformerBlockParams p;
  p.norm1 = init_layer_norm(width);
  p.attention = init_mha(width, heads, rng);
  p.norm2 = init_layer_norm(width);
  p.expand = init_linear(width, kFeedForwardRatio * width, rng);
  p.contract = init_linear(kFeedForwardRatio * width, width, rng);
  return p;
}

ConvParams init_conv(std::size_t in_channels, std::size_t out_channels, std::size_t ksize, Rng& rng) {
  const std::size_t area = ksize * ksize;
  return {glorot_uniform({out_channels, in_channels, ksize, ksize}, in_channels * area, out_channels * area, rng),
          Tensor::zeros({out_channels})};
}

Tensor linear_forward(const Tensor& x, const LinearParams& p) {
  if (x.shape().back() != p.in()) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(p.weight.shape()));
  }
  if (x.rank() == 2) return add(matmul(x, p.weight), p.bias);
  Shape out_shape = x.shape();
  out_shape.back() = p.out();
  Tensor flat = reshape(x, {x.size() / p.in(), p.in()});
  return reshape(add(matmul(flat, p.weight), p.bias), std::move(out_shape));
}

MhaOutput multi_head_attention(const Tensor& x, const MhaParams& p) {
  const std::size_t d = p.width();
  if ((x.rank() != 2 && x.rank() != 3) || x.shape().back() != d) {
    throw ShapeError("multi_head_attention: input " + shape_str(x.shape()) + " does not match width " +
                     std::to_string(d));
  }
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t n = x.dim(x.rank() - 2);
  const std::size_t dh = p.head_width();
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor flat = reshape(x, {batch * n, d});
  Tensor q = reshape(matmul(flat, p.wq), {batch, n, d});
  Tensor k = reshape(matmul(flat, p.wk), {batch, n, d});
  Tensor v = reshape(matmul(flat, p.wv), {batch, n, d});

  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  std::vector<double> weights(batch * p.heads * n * n);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Tensor qh = slice(q, 2, h * dh, dh);
    Tensor kh = slice(k, 2, h * dh, dh);
    Tensor vh = slice(v, 2, h * dh, dh);
    Tensor attn = softmax(scale(matmul(qh, transpose(kh)), scale_factor), 2);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < n * n; ++i) weights[(b * p.heads + h) * n * n + i] = attn[b * n * n + i];
    heads.push_back(matmul(attn, vh));
  }
  Tensor mixed = concat(heads, 2);
  Tensor out = reshape(matmul(reshape(mixed, {batch * n, d}), p.wo), x.shape());

  MhaOutput result;
  result.output = std::move(out);
  result.mixed = batched ? mixed : reshape(mixed, {n, d});
  Shape wshape = batched ? Shape{batch, p.heads, n, n} : Shape{p.heads, n, n};
  result.weights = Tensor(std::move(wshape), std::move(weights));
  return result;
}

Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p) {
  Tensor attended = multi_head_attention(layer_norm(x, p.norm1.gamma, p.norm1.beta), p.attention).output;
  Tensor h = add(x, attended);
  Tensor ff = linear_forward(relu(linear_forward(layer_norm(h, p.norm2.gamma, p.norm2.beta), p.expand)), p.contract);
  return add(h, ff);
}

Tensor conv_block(const Tensor& img, const ConvParams& p) {
  return maxpool2d(relu(conv2d(img, p.weight, p.bias)));
}

}  // namespace jft::nn
