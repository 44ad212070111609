#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jft {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Identifies a node on a specific tape.
struct NodeRef {
  std::uint64_t tape_id = 0;
  std::size_t index = 0;

  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

// Immutable dense row-major array of doubles. Copies share storage.
// A tensor that participates in gradient computation carries a NodeRef on
// the tape that produced (or watched) it.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_->size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> values() const { return *values_; }
  const double* data() const { return values_->data(); }
  double operator[](std::size_t i) const { return (*values_)[i]; }
  // Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return node_.has_value(); }
  const std::optional<NodeRef>& node() const { return node_; }

  // Same values, no tape participation.
  Tensor detached() const;

  bool same_values(const Tensor& other) const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  std::optional<NodeRef> node_;
};

}  // namespace jft
