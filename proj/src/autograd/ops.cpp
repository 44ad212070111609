#include "jft/autograd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "kernels.hpp"

namespace jft {
namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& what) {
  throw ShapeError(std::string(to_string(kind)) + ": " + what);
}

[[noreturn]] void shape_fail(OpKind kind, const Tensor& a, const Tensor& b) {
  shape_fail(kind, "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tape& require_tape(OpKind kind) {
  Tape* tape = Tape::active();
  if (!tape) {
    throw AutogradError(std::string(to_string(kind)) + ": input requires grad but no tape is active");
  }
  return *tape;
}

// Builds the result, recording it when an input requires grad. make_fn is only
// invoked when recording, so saved activations cost nothing in inference.
template <class MakeFn>
Tensor finish(OpKind kind, std::initializer_list<const Tensor*> inputs, Shape shape,
              std::vector<double> values, MakeFn&& make_fn) {
  if (!any_requires_grad(inputs)) return Tensor(std::move(shape), std::move(values));
  Tape& tape = require_tape(kind);
  Tape::BackwardFn fn = make_fn(values);
  return tape.record(kind, inputs, std::move(shape), std::move(values), std::move(fn));
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(OpKind kind, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    shape_fail(kind, "axis " + std::to_string(axis) + " out of range for shape " + shape_str(x.shape()));
  }
}

template <class F, class DF>
Tensor unary(OpKind kind, const Tensor& x, F f, DF df) {
  std::vector<double> out(x.size());
  const double* xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  return finish(kind, {&x}, x.shape(), std::move(out), [&](const std::vector<double>& y) {
    return [x, y, df](std::span<const double> g, std::span<const std::span<double>> gin) {
      auto gx = gin[0];
      const double* xs = x.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * df(xs[i], y[i]);
    };
  });
}

Tensor reduce_sum(OpKind kind, const Tensor& x, double factor) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  std::size_t n = x.size();
  return finish(kind, {&x}, Shape{1}, {s * factor}, [&](const std::vector<double>&) {
    return [n, factor](std::span<const double> g, std::span<const std::span<double>> gin) {
      for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0] * factor;
    };
  });
}

Tensor reduce_axis(OpKind kind, const Tensor& x, std::size_t axis, bool average) {
  check_axis(kind, x, axis);
  auto s = split_at(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) out_shape.push_back(x.shape()[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  double factor = average ? 1.0 / static_cast<double>(s.n) : 1.0;
  std::vector<double> out(s.outer * s.inner, 0.0);
  const double* xs = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xs[(o * s.n + k) * s.inner + i];
  for (double& v : out) v *= factor;
  return finish(kind, {&x}, std::move(out_shape), std::move(out), [&](const std::vector<double>&) {
    return [s, factor](std::span<const double> g, std::span<const std::span<double>> gin) {
      auto gx = gin[0];
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.n; ++k)
          for (std::size_t i = 0; i < s.inner; ++i)
            gx[(o * s.n + k) * s.inner + i] += g[o * s.inner + i] * factor;
    };
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  constexpr auto kind = OpKind::matmul;
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  if (a.rank() == 2 && b.rank() == 2) {
    m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) shape_fail(kind, a, b);
  } else if (a.rank() == 3 && b.rank() == 3) {
    batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) shape_fail(kind, a, b);
  } else {
    shape_fail(kind, a, b);
  }
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t p = 0; p < batch; ++p) {
    kernels::gemm_nn(m, n, k, a.data() + p * m * k, b.data() + p * k * n, out.data() + p * m * n);
  }
  Shape shape = a.rank() == 2 ? Shape{m, n} : Shape{batch, m, n};
  return finish(kind, {&a, &b}, std::move(shape), std::move(out), [&](const std::vector<double>&) {
    return [a, b, batch, m, n, k](std::span<const double> g, std::span<const std::span<double>> gin) {
      for (std::size_t p = 0; p < batch; ++p) {
        const double* gp = g.data() + p * m * n;
        if (!gin[0].empty()) kernels::gemm_nt(m, k, n, gp, b.data() + p * k * n, gin[0].data() + p * m * k);
        if (!gin[1].empty()) kernels::gemm_tn(k, n, m, a.data() + p * m * k, gp, gin[1].data() + p * k * n);
      }
    };
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  constexpr auto kind = OpKind::add;
  std::vector<double> out(a.values().begin(), a.values().end());
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return finish(kind, {&a, &b}, a.shape(), std::move(out), [&](const std::vector<double>&) {
      return [](std::span<const double> g, std::span<const std::span<double>> gin) {
        for (auto gi : gin) {
          if (gi.empty()) continue;
          for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
        }
      };
    });
  }
  if (b.rank() != 1 || b.dim(0) != a.shape().back()) shape_fail(kind, a, b);
  std::size_t width = b.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % width];
  return finish(kind, {&a, &b}, a.shape(), std::move(out), [&](const std::vector<double>&) {
    return [width](std::span<const double> g, std::span<const std::span<double>> gin) {
      if (!gin[0].empty())
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
      if (!gin[1].empty())
        for (std::size_t i = 0; i < g.size(); ++i) gin[1][i % width] += g[i];
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  constexpr auto kind = OpKind::mul;
  std::vector<double> out(a.size());
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return finish(kind, {&a, &b}, a.shape(), std::move(out), [&](const std::vector<double>&) {
      return [a, b](std::span<const double> g, std::span<const std::span<double>> gin) {
        if (!gin[0].empty())
          for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * b[i];
        if (!gin[1].empty())
          for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * a[i];
      };
    });
  }
  if (b.size() != 1) shape_fail(kind, a, b);
  double c = b[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return finish(kind, {&a, &b}, a.shape(), std::move(out), [&](const std::vector<double>&) {
    return [a, c](std::span<const double> g, std::span<const std::span<double>> gin) {
      if (!gin[0].empty())
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * c;
      if (!gin[1].empty())
        for (std::size_t i = 0; i < g.size(); ++i) gin[1][0] += g[i] * a[i];
    };
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return finish(OpKind::mul, {&a}, a.shape(), std::move(out), [&](const std::vector<double>&) {
    return [factor](std::span<const double> g, std::span<const std::span<double>> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * factor;
    };
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw std::domain_error("log: input must be positive");
  }
  return unary(
      OpKind::log, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      OpKind::exp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  constexpr auto kind = OpKind::softmax;
  check_axis(kind, x, axis);
  auto s = split_at(x.shape(), axis);
  std::vector<double> out(x.size());
  const double* xs = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, xs[at(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) z += (out[at(k)] = std::exp(xs[at(k)] - mx));
      for (std::size_t k = 0; k < s.n; ++k) out[at(k)] /= z;
    }
  }
  return finish(kind, {&x}, x.shape(), std::move(out), [&](const std::vector<double>& y) {
    return [s, y](std::span<const double> g, std::span<const std::span<double>> gin) {
      auto gx = gin[0];
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          auto at = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
          double dot = 0.0;
          for (std::size_t k = 0; k < s.n; ++k) dot += g[at(k)] * y[at(k)];
          for (std::size_t k = 0; k < s.n; ++k) gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
        }
      }
    };
  });
}

Tensor sum(const Tensor& x) { return reduce_sum(OpKind::sum, x, 1.0); }
Tensor sum(const Tensor& x, std::size_t axis) { return reduce_axis(OpKind::sum, x, axis, false); }
Tensor mean(const Tensor& x) { return reduce_sum(OpKind::mean, x, 1.0 / static_cast<double>(x.size())); }
Tensor mean(const Tensor& x, std::size_t axis) { return reduce_axis(OpKind::mean, x, axis, true); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size() || shape.empty()) {
    shape_fail(OpKind::reshape, "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return finish(OpKind::reshape, {&x}, std::move(shape), std::move(out), [&](const std::vector<double>&) {
    return [](std::span<const double> g, std::span<const std::span<double>> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    };
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  constexpr auto kind = OpKind::concat;
  if (parts.empty()) shape_fail(kind, "no inputs");
  const Tensor& first = parts.front();
  check_axis(kind, first, axis);
  Shape shape = first.shape();
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank()) shape_fail(kind, first, p);
    for (std::size_t i = 0; i < p.rank(); ++i) {
      if (i != axis && p.dim(i) != first.dim(i)) shape_fail(kind, first, p);
    }
    shape[axis] += p.dim(axis);
  }
  auto s = split_at(shape, axis);
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) widths.push_back(p.dim(axis) * s.inner);
  std::size_t row = s.n * s.inner;
  std::vector<double> out(shape_size(shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::size_t offset = o * row;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const double* src = parts[k].data() + o * widths[k];
      std::copy(src, src + widths[k], out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += widths[k];
    }
  }
  bool needs = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return Tensor(std::move(shape), std::move(out));
  Tape& tape = require_tape(kind);
  std::size_t outer = s.outer;
  auto fn = [outer, row, widths](std::span<const double> g, std::span<const std::span<double>> gin) {
    for (std::size_t o = 0; o < outer; ++o) {
      std::size_t offset = o * row;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        if (!gin[k].empty()) {
          double* dst = gin[k].data() + o * widths[k];
          for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += g[offset + i];
        }
        offset += widths[k];
      }
    }
  };
  return tape.record(kind, parts, std::move(shape), std::move(out), fn);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  constexpr auto kind = OpKind::slice;
  check_axis(kind, x, axis);
  if (length == 0 || start + length > x.dim(axis)) {
    shape_fail(kind, "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of bounds for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  auto s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<double> out(s.outer * length * s.inner);
  std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = x.data() + (o * s.n + start) * s.inner;
    std::copy(src, src + chunk, out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  }
  return finish(kind, {&x}, std::move(shape), std::move(out), [&](const std::vector<double>&) {
    return [s, start, chunk](std::span<const double> g, std::span<const std::span<double>> gin) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        double* dst = gin[0].data() + (o * s.n + start) * s.inner;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[o * chunk + i];
      }
    };
  });
}

Tensor transpose(const Tensor& x) {
  constexpr auto kind = OpKind::transpose;
  if (x.rank() < 2) shape_fail(kind, "needs rank >= 2, got " + shape_str(x.shape()));
  std::size_t r = x.dim(x.rank() - 2), c = x.dim(x.rank() - 1);
  std::size_t batch = x.size() / (r * c);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<double> out(x.size());
  for (std::size_t p = 0; p < batch; ++p)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[p * r * c + j * r + i] = x[p * r * c + i * c + j];
  return finish(kind, {&x}, std::move(shape), std::move(out), [&](const std::vector<double>&) {
    return [batch, r, c](std::span<const double> g, std::span<const std::span<double>> gin) {
      for (std::size_t p = 0; p < batch; ++p)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gin[0][p * r * c + i * c + j] += g[p * r * c + j * r + i];
    };
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids, Shape ids_shape) {
  constexpr auto kind = OpKind::embedding_lookup;
  if (table.rank() != 2) shape_fail(kind, "table must be [vocab, width], got " + shape_str(table.shape()));
  if (shape_size(ids_shape) != ids.size() || ids_shape.empty()) {
    shape_fail(kind, "ids shape " + shape_str(ids_shape) + " does not match " + std::to_string(ids.size()) + " ids");
  }
  std::size_t vocab = table.dim(0), width = table.dim(1);
  for (auto id : ids) {
    if (id >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " >= vocab " + std::to_string(vocab));
    }
  }
  std::vector<double> out(ids.size() * width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* src = table.data() + ids[i] * width;
    std::copy(src, src + width, out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  Shape shape = std::move(ids_shape);
  shape.push_back(width);
  return finish(kind, {&table}, std::move(shape), std::move(out), [&](const std::vector<double>&) {
    std::vector<std::size_t> saved(ids.begin(), ids.end());
    return [saved, width](std::span<const double> g, std::span<const std::span<double>> gin) {
      for (std::size_t i = 0; i < saved.size(); ++i) {
        double* dst = gin[0].data() + saved[i] * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += g[i * width + j];
      }
    };
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  constexpr auto kind = OpKind::conv2d;
  if (x.rank() != 3 && x.rank() != 4) shape_fail(kind, "input must be [c,h,w] or [b,c,h,w], got " + shape_str(x.shape()));
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    shape_fail(kind, "weight must be [out,in,k,k], got " + shape_str(weight.shape()));
  }
  bool batched = x.rank() == 4;
  std::size_t batch = batched ? x.dim(0) : 1;
  std::size_t channels = x.dim(x.rank() - 3), height = x.dim(x.rank() - 2), width = x.dim(x.rank() - 1);
  std::size_t out_ch = weight.dim(0), ksize = weight.dim(2);
  if (weight.dim(1) != channels) shape_fail(kind, x, weight);
  if (bias.rank() != 1 || bias.dim(0) != out_ch) shape_fail(kind, weight, bias);
  if (ksize > height || ksize > width) {
    shape_fail(kind, "kernel " + std::to_string(ksize) + " larger than input " + shape_str(x.shape()));
  }
  kernels::ConvGeometry geo{channels, height, width, ksize};
  std::size_t oh = geo.out_h(), ow = geo.out_w(), cols_rows = channels * ksize * ksize, spatial = oh * ow;

  std::vector<double> cols(batch * cols_rows * spatial);
  std::vector<double> out(batch * out_ch * spatial);
  for (std::size_t p = 0; p < batch; ++p) {
    double* col = cols.data() + p * cols_rows * spatial;
    double* y = out.data() + p * out_ch * spatial;
    kernels::im2col(geo, x.data() + p * channels * height * width, col);
    for (std::size_t o = 0; o < out_ch; ++o) std::fill(y + o * spatial, y + (o + 1) * spatial, bias[o]);
    kernels::gemm_nn(out_ch, spatial, cols_rows, weight.data(), col, y);
  }
  Shape shape = batched ? Shape{batch, out_ch, oh, ow} : Shape{out_ch, oh, ow};
  return finish(kind, {&x, &weight, &bias}, std::move(shape), std::move(out), [&](const std::vector<double>&) {
    return [weight, geo, cols = std::move(cols), batch, out_ch, cols_rows, spatial](
               std::span<const double> g, std::span<const std::span<double>> gin) {
      std::vector<double> dcol(cols_rows * spatial);
      std::size_t in_size = geo.channels * geo.height * geo.width;
      for (std::size_t p = 0; p < batch; ++p) {
        const double* gy = g.data() + p * out_ch * spatial;
        if (!gin[2].empty())
          for (std::size_t o = 0; o < out_ch; ++o)
            for (std::size_t i = 0; i < spatial; ++i) gin[2][o] += gy[o * spatial + i];
        if (!gin[1].empty()) kernels::gemm_nt(out_ch, cols_rows, spatial, gy, cols.data() + p * cols_rows * spatial, gin[1].data());
        if (!gin[0].empty()) {
          std::fill(dcol.begin(), dcol.end(), 0.0);
          kernels::gemm_tn(cols_rows, spatial, out_ch, weight.data(), gy, dcol.data());
          kernels::col2im_add(geo, dcol.data(), gin[0].data() + p * in_size);
        }
      }
    };
  });
}

Tensor maxpool2d(const Tensor& x) {
  constexpr auto kind = OpKind::maxpool2d;
  if (x.rank() != 3 && x.rank() != 4) shape_fail(kind, "input must be rank 3 or 4, got " + shape_str(x.shape()));
  std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (h < 2 || w < 2) shape_fail(kind, "spatial size must be >= 2, got " + shape_str(x.shape()));
  std::size_t oh = h / 2, ow = w / 2, planes = x.size() / (h * w);
  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  std::vector<double> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            std::size_t at = (2 * i + di) * w + 2 * j + dj;
            if (src[at] > src[best]) best = at;
          }
        std::size_t o = (p * oh + i) * ow + j;
        out[o] = src[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  return finish(kind, {&x}, std::move(shape), std::move(out), [&](const std::vector<double>&) {
    return [argmax = std::move(argmax)](std::span<const double> g, std::span<const std::span<double>> gin) {
      for (std::size_t o = 0; o < argmax.size(); ++o) gin[0][argmax[o]] += g[o];
    };
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  constexpr auto kind = OpKind::layer_norm;
  std::size_t d = x.shape().back();
  if (gamma.rank() != 1 || gamma.dim(0) != d) shape_fail(kind, x, gamma);
  if (beta.rank() != 1 || beta.dim(0) != d) shape_fail(kind, x, beta);
  std::size_t rows = x.size() / d;
  std::vector<double> xhat(x.size()), inv_std(rows), out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gamma[j] + beta[j];
    }
  }
  return finish(kind, {&x, &gamma, &beta}, x.shape(), std::move(out), [&](const std::vector<double>&) {
    return [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](
               std::span<const double> g, std::span<const std::span<double>> gin) {
      std::vector<double> dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * d;
        const double* xh = xhat.data() + r * d;
        if (!gin[1].empty())
          for (std::size_t j = 0; j < d; ++j) gin[1][j] += gr[j] * xh[j];
        if (!gin[2].empty())
          for (std::size_t j = 0; j < d; ++j) gin[2][j] += gr[j];
        if (gin[0].empty()) continue;
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dxhat[j] = gr[j] * gamma[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * xh[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        double* gx = gin[0].data() + r * d;
        for (std::size_t j = 0; j < d; ++j) gx[j] += inv_std[r] * (dxhat[j] - m1 - xh[j] * m2);
      }
    };
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  constexpr auto kind = OpKind::cross_entropy;
  if (logits.rank() != 1 && logits.rank() != 2) {
    shape_fail(kind, "logits must be [c] or [b,c], got " + shape_str(logits.shape()));
  }
  std::size_t rows = logits.rank() == 1 ? 1 : logits.dim(0);
  std::size_t classes = logits.shape().back();
  if (labels.size() != rows) {
    shape_fail(kind, std::to_string(labels.size()) + " labels for logits " + shape_str(logits.shape()));
  }
  for (auto y : labels) {
    if (y >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " out of range for " +
                              std::to_string(classes) + " classes");
    }
  }
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * classes;
    double mx = *std::max_element(z, z + classes);
    double sum_exp = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum_exp += (probs[r * classes + c] = std::exp(z[c] - mx));
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] /= sum_exp;
    total += std::log(sum_exp) + mx - z[labels[r]];
  }
  double inv_rows = 1.0 / static_cast<double>(rows);
  return finish(kind, {&logits}, Shape{1}, {total * inv_rows}, [&](const std::vector<double>&) {
    std::vector<std::size_t> saved(labels.begin(), labels.end());
    return [probs = std::move(probs), saved, classes, inv_rows](std::span<const double> g,
                                                                std::span<const std::span<double>> gin) {
      for (std::size_t r = 0; r < saved.size(); ++r)
        for (std::size_t c = 0; c < classes; ++c) {
          double target = c == saved[r] ? 1.0 : 0.0;
          gin[0][r * classes + c] += g[0] * inv_rows * (probs[r * classes + c] - target);
        }
    };
  });
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  std::size_t labels[1] = {label};
  return cross_entropy(logits, std::span<const std::size_t>(labels));
}

Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(to_string(kind)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::mul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::relu: need(1); return relu(inputs[0]);
    case OpKind::softmax: need(1); return softmax(inputs[0], attrs.axis);
    case OpKind::log: need(1); return log(inputs[0]);
    case OpKind::exp: need(1); return exp(inputs[0]);
    case OpKind::mean:
      need(1);
      return attrs.full_reduction ? mean(inputs[0]) : mean(inputs[0], attrs.axis);
    case OpKind::sum:
      need(1);
      return attrs.full_reduction ? sum(inputs[0]) : sum(inputs[0], attrs.axis);
    case OpKind::reshape: need(1); return reshape(inputs[0], attrs.shape);
    case OpKind::concat: return concat(inputs, attrs.axis);
    case OpKind::slice: need(1); return slice(inputs[0], attrs.axis, attrs.start, attrs.length);
    case OpKind::transpose: need(1); return transpose(inputs[0]);
    case OpKind::embedding_lookup:
      need(1);
      return embedding_lookup(inputs[0], attrs.ids, attrs.shape.empty() ? Shape{attrs.ids.size()} : attrs.shape);
    case OpKind::conv2d: need(3); return conv2d(inputs[0], inputs[1], inputs[2]);
    case OpKind::maxpool2d: need(1); return maxpool2d(inputs[0]);
    case OpKind::layer_norm: need(3); return layer_norm(inputs[0], inputs[1], inputs[2], attrs.eps);
    case OpKind::cross_entropy: need(1); return cross_entropy(inputs[0], attrs.ids);
    case OpKind::leaf: break;
  }
  throw std::invalid_argument("apply: unknown op kind '" + std::string(to_string(kind)) + "'");
}

}  // namespace jft
