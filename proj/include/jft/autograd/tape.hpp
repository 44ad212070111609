#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "jft/autograd/tensor.hpp"

namespace jft {

enum class OpKind {
  leaf,
  matmul,
  add,
  mul,
  relu,
  softmax,
  log,
  exp,
  mean,
  sum,
  reshape,
  concat,
  slice,
  transpose,
  embedding_lookup,
  conv2d,
  maxpool2d,
  layer_norm,
  cross_entropy,
};

std::string_view to_string(OpKind kind);
// Throws std::invalid_argument for names outside the supported op set.
OpKind op_kind_from_string(std::string_view name);

// Gradients of the loss, keyed by the leaf's node index on the tape.
using GradientMap = std::map<std::size_t, Tensor>;

// Records applied operations so that gradients can be propagated in reverse.
//
// A tape is owned by a single training context. Tensors enter it through
// watch(); every op applied to a watched tensor (directly or transitively)
// while the tape is active (see TapeScope) is recorded. backward() consumes
// the tape; a second call without reset() is an error.
class Tape {
 public:
  // Accumulates into the gradient of each input; an empty span marks an
  // input that does not need a gradient.
  using BackwardFn = std::function<void(std::span<const double> grad_out,
                                        std::span<const std::span<double>> grad_in)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Registers t as a leaf and returns a copy that requires grad.
  Tensor watch(const Tensor& t);

  Tensor record(OpKind kind, std::initializer_list<const Tensor*> inputs, Shape out_shape,
                std::vector<double> out_values, BackwardFn fn);
  Tensor record(OpKind kind, std::span<const Tensor> inputs, Shape out_shape,
                std::vector<double> out_values, BackwardFn fn);

  GradientMap backward(const Tensor& loss);

  // Gradient of a watched tensor, or nullptr when it was unreachable.
  static const Tensor* find(const GradientMap& grads, const Tensor& watched);

  void reset();

  // The tape ops record onto in the current thread, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;

  struct Node {
    OpKind kind = OpKind::leaf;
    Shape shape;
    std::vector<std::ptrdiff_t> inputs;  // -1 for constants
    std::vector<std::size_t> input_sizes;
    BackwardFn fn;
  };

  Tensor push(Node node, std::vector<double> out_values);
  void check_owned(const Tensor& t, OpKind kind) const;

  std::uint64_t id_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Makes a tape active for the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace jft
