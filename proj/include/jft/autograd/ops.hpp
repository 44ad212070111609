#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "jft/autograd/tape.hpp"
#include "jft/autograd/tensor.hpp"

// Differentiable operations. Each op records itself on the active tape when
// any input requires grad. Broadcasting is limited to scalar-times-tensor
// (mul with a one-element operand) and bias-add of a vector along the last
// axis; every other shape mismatch throws ShapeError naming the op.
namespace jft {

// [m,k]x[k,n] -> [m,n], or batched [b,m,k]x[b,k,n] -> [b,m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Same shapes, or b of shape [last dim of a] added along the last axis.
Tensor add(const Tensor& a, const Tensor& b);
// Same shapes, or b with a single element.
Tensor mul(const Tensor& a, const Tensor& b);
// Multiplication by a constant.
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
// Max-subtracted softmax along axis.
Tensor softmax(const Tensor& x, std::size_t axis);
// Full reductions return shape [1]; axis reductions drop the axis.
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
// Rows of table [V,d] gathered at ids; result shape is ids_shape + [d].
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids, Shape ids_shape);
// Stride 1, no padding, square kernel. x [c,h,w] or [b,c,h,w]; weight [o,c,k,k]; bias [o].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
// 2x2 window, stride 2, floor on odd sizes, over the last two axes (rank 3 or 4).
// On ties the first element in row-major order receives the gradient.
Tensor maxpool2d(const Tensor& x);
// Normalizes over the last axis, then scale and shift by gamma/beta [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// Mean over rows of -log softmax(logits)[label]. logits [c] (one label) or [b,c].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
Tensor cross_entropy(const Tensor& logits, std::size_t label);

// Attributes for the generic dispatcher.
struct OpAttrs {
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  Shape shape;
  std::vector<std::size_t> ids;
  double eps = 1e-5;
  bool full_reduction = true;
};

// Dispatches by kind; validates the input count for the kind.
Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace jft
