#include "jft/autograd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "jft/autograd/tape.hpp"

namespace jft {
namespace {

double evaluate(const ScalarFn& f, std::span<const Tensor> inputs) {
  Tensor out = f(inputs);
  if (out.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar, got " + shape_str(out.shape()));
  return out[0];
}

}  // namespace

double grad_check(const ScalarFn& f, std::span<const Tensor> inputs, const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> watched;
    watched.reserve(inputs.size());
    for (const Tensor& t : inputs) watched.push_back(tape.watch(t.detached()));
    Tensor out = f(watched);
    if (out.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar, got " + shape_str(out.shape()));
    if (!out.requires_grad()) {
      for (const Tensor& t : inputs) analytic.push_back(Tensor::zeros(t.shape()));
    } else {
      GradientMap grads = tape.backward(out);
      for (const Tensor& w : watched) {
        const Tensor* g = Tape::find(grads, w);
        analytic.push_back(g ? *g : Tensor::zeros(w.shape()));
      }
    }
  }

  std::mt19937_64 rng(options.seed);
  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  for (auto& t : probe) t = t.detached();

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> coords(inputs[k].size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_input != 0 && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
    }
    std::vector<double> v(inputs[k].values().begin(), inputs[k].values().end());
    for (std::size_t i : coords) {
      const double x = v[i];
      v[i] = x + options.eps;
      probe[k] = Tensor(inputs[k].shape(), v);
      double up = evaluate(f, probe);
      v[i] = x - options.eps;
      probe[k] = Tensor(inputs[k].shape(), v);
      double down = evaluate(f, probe);
      v[i] = x;
      double numeric = (up - down) / (2.0 * options.eps);
      double a = analytic[k][i];
      double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    probe[k] = inputs[k].detached();
  }
  return worst;
}

}  // namespace jft
