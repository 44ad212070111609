#include "kernels.hpp"

namespace jft::kernels {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += ai[p] * bj[p];
        s1 += ai[p + 1] * bj[p + 1];
        s2 += ai[p + 2] * bj[p + 2];
        s3 += ai[p + 3] * bj[p + 3];
      }
      for (; p < k; ++p) s0 += ai[p] * bj[p];
      c[i * n + j] += (s0 + s1) + (s2 + s3);
    }
  }
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void im2col(const ConvGeometry& geo, const double* img, double* cols) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w(), k = geo.ksize;
  std::size_t row = 0;
  for (std::size_t c = 0; c < geo.channels; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj, ++row) {
        double* dst = cols + row * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const double* src = img + (c * geo.height + y + ki) * geo.width + kj;
          for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] = src[x];
        }
      }
}

void col2im_add(const ConvGeometry& geo, const double* cols, double* img) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w(), k = geo.ksize;
  std::size_t row = 0;
  for (std::size_t c = 0; c < geo.channels; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj, ++row) {
        const double* src = cols + row * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          double* dst = img + (c * geo.height + y + ki) * geo.width + kj;
          for (std::size_t x = 0; x < ow; ++x) dst[x] += src[y * ow + x];
        }
      }
}

}  // namespace jft::kernels
