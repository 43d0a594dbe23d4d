#pragma once

#include <cblas.h>

#include <cstddef>
#include <vector>

#include "czc/common.hpp"

namespace czc {

// Batched feature map, stored channel-major: v[((c * b + bi) * h + y) * w + x].
// A row of the implied (ch) x (b*h*w) matrix is one channel across the whole
// batch, which is the layout the im2col/GEMM kernels want.
struct Fmap {
  int ch = 0, b = 0, h = 0, w = 0;
  std::vector<float> v;

  Fmap() = default;
  Fmap(int ch_, int b_, int h_, int w_)
      : ch(ch_), b(b_), h(h_), w(w_),
        v(static_cast<size_t>(ch_) * b_ * h_ * w_, 0.0f) {}

  size_t numel() const { return v.size(); }
  int cols() const { return b * h * w; }
  float* row(int c) { return v.data() + static_cast<size_t>(c) * cols(); }
  const float* row(int c) const {
    return v.data() + static_cast<size_t>(c) * cols();
  }
  float& at(int c, int bi, int y, int x) {
    return v[((static_cast<size_t>(c) * b + bi) * h + y) * w + x];
  }
  float at(int c, int bi, int y, int x) const {
    return v[((static_cast<size_t>(c) * b + bi) * h + y) * w + x];
  }
  void zero() { std::fill(v.begin(), v.end(), 0.0f); }
};

// Plain row-major matrix for heads, features, and GEMM scratch.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<float> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0f) {}

  float* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const float* row(int r) const {
    return v.data() + static_cast<size_t>(r) * cols;
  }
  float& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  float at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  void zero() { std::fill(v.begin(), v.end(), 0.0f); }
};

// C = alpha * op(A) * op(B) + beta * C, row-major.
inline void gemm_nn(int m, int n, int k, const float* a, const float* b,
                    float* c, float alpha = 1.0f, float beta = 0.0f) {
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, alpha, a, k,
              b, n, beta, c, n);
}
inline void gemm_nt(int m, int n, int k, const float* a, const float* b,
                    float* c, float alpha = 1.0f, float beta = 0.0f) {
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, alpha, a, k, b,
              k, beta, c, n);
}
inline void gemm_tn(int m, int n, int k, const float* a, const float* b,
                    float* c, float alpha = 1.0f, float beta = 0.0f) {
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, m, n, k, alpha, a, m, b,
              n, beta, c, n);
}

}  // namespace czc
