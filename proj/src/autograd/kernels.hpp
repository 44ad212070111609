#pragma once

#include <cstddef>

// Dense row-major loops shared by matmul and conv2d. All routines accumulate
// into the output.
namespace jft::kernels {

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// c[m,n] += a[k,m]^T * b[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

struct ConvGeometry {
  std::size_t channels;
  std::size_t height;
  std::size_t width;
  std::size_t ksize;

  std::size_t out_h() const { return height - ksize + 1; }
  std::size_t out_w() const { return width - ksize + 1; }
};

// cols[(c*k + ki)*k + kj, oy*out_w + ox] = img[c, oy+ki, ox+kj]
void im2col(const ConvGeometry& geo, const double* img, double* cols);
void col2im_add(const ConvGeometry& geo, const double* cols, double* img);

}  // namespace jft::kernels
