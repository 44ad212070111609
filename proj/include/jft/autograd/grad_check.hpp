#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "jft/autograd/tensor.hpp"

namespace jft {

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

struct GradCheckOptions {
  double eps = 1e-4;
  // Check at most this many coordinates per input (0 = all), picked with seed.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

// Max relative error between reverse-mode gradients of f at inputs and central
// finite differences (f(x+eps e_i) - f(x-eps e_i)) / 2eps, using the
// denominator max(|a|, |b|, 1e-8). Every input is treated as a variable.
double grad_check(const ScalarFn& f, std::span<const Tensor> inputs, const GradCheckOptions& options = {});

}  // namespace jft
