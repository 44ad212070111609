#include "jft/autograd/tape.hpp"

#include <array>
#include <atomic>
#include <stdexcept>
#include <string>

namespace jft {
namespace {

constexpr std::array<std::string_view, 19> kOpNames = {
    "leaf",   "matmul", "add",       "mul",       "relu",
    "softmax", "log",   "exp",       "mean",      "sum",
    "reshape", "concat", "slice",    "transpose", "embedding_lookup",
    "conv2d", "maxpool2d", "layer_norm", "cross_entropy",
};

std::atomic<std::uint64_t> next_tape_id{1};
thread_local Tape* active_tape = nullptr;

}  // namespace

std::string_view to_string(OpKind kind) { return kOpNames.at(static_cast<std::size_t>(kind)); }

OpKind op_kind_from_string(std::string_view name) {
  for (std::size_t i = 1; i < kOpNames.size(); ++i) {
    if (kOpNames[i] == name) return static_cast<OpKind>(i);
  }
  throw std::invalid_argument("unknown op kind '" + std::string(name) + "'");
}

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Tape* Tape::active() { return active_tape; }

Tensor Tape::push(Node node, std::vector<double> out_values) {
  Tensor out(node.shape, std::move(out_values));
  out.node_ = NodeRef{id_, nodes_.size()};
  nodes_.push_back(std::move(node));
  return out;
}

void Tape::check_owned(const Tensor& t, OpKind kind) const {
  if (t.node_ && t.node_->tape_id != id_) {
    throw AutogradError(std::string(to_string(kind)) + ": input belongs to a different tape");
  }
}

Tensor Tape::watch(const Tensor& t) {
  if (consumed_) throw AutogradError("watch on a consumed tape; call reset() first");
  Node node;
  node.kind = OpKind::leaf;
  node.shape = t.shape();
  Tensor out = t;
  out.node_ = NodeRef{id_, nodes_.size()};
  nodes_.push_back(std::move(node));
  return out;
}

Tensor Tape::record(OpKind kind, std::initializer_list<const Tensor*> inputs, Shape out_shape,
                    std::vector<double> out_values, BackwardFn fn) {
  if (consumed_) throw AutogradError("record on a consumed tape; call reset() first");
  Node node;
  node.kind = kind;
  node.shape = std::move(out_shape);
  node.fn = std::move(fn);
  node.inputs.reserve(inputs.size());
  for (const Tensor* t : inputs) {
    check_owned(*t, kind);
    node.inputs.push_back(t->node_ ? static_cast<std::ptrdiff_t>(t->node_->index) : -1);
    node.input_sizes.push_back(t->size());
  }
  return push(std::move(node), std::move(out_values));
}

Tensor Tape::record(OpKind kind, std::span<const Tensor> inputs, Shape out_shape,
                    std::vector<double> out_values, BackwardFn fn) {
  if (consumed_) throw AutogradError("record on a consumed tape; call reset() first");
  Node node;
  node.kind = kind;
  node.shape = std::move(out_shape);
  node.fn = std::move(fn);
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    check_owned(t, kind);
    node.inputs.push_back(t.node_ ? static_cast<std::ptrdiff_t>(t.node_->index) : -1);
    node.input_sizes.push_back(t.size());
  }
  return push(std::move(node), std::move(out_values));
}

GradientMap Tape::backward(const Tensor& loss) {
  if (consumed_) throw AutogradError("backward called twice on the same tape without reset()");
  if (!loss.node_ || loss.node_->tape_id != id_) {
    throw AutogradError("backward: loss was not produced on this tape");
  }
  if (loss.size() != 1) {
    throw AutogradError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  consumed_ = true;

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[loss.node_->index].assign(1, 1.0);

  GradientMap result;
  std::vector<std::span<double>> sinks;
  for (std::size_t i = loss.node_->index + 1; i-- > 0;) {
    if (grads[i].empty()) continue;
    Node& node = nodes_[i];
    if (node.kind == OpKind::leaf) {
      result.emplace(i, Tensor(node.shape, std::move(grads[i])));
      continue;
    }
    sinks.assign(node.inputs.size(), std::span<double>{});
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      auto in = node.inputs[k];
      if (in < 0) continue;
      auto& g = grads[static_cast<std::size_t>(in)];
      if (g.empty()) g.assign(node.input_sizes[k], 0.0);
      sinks[k] = g;
    }
    node.fn(grads[i], sinks);
    grads[i].clear();
    grads[i].shrink_to_fit();
  }
  return result;
}

const Tensor* Tape::find(const GradientMap& grads, const Tensor& watched) {
  if (!watched.node()) return nullptr;
  auto it = grads.find(watched.node()->index);
  return it == grads.end() ? nullptr : &it->second;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
  id_ = next_tape_id.fetch_add(1);
}

TapeScope::TapeScope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }

TapeScope::~TapeScope() { active_tape = previous_; }

}  // namespace jft
