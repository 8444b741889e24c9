#pragma once

#include <cstddef>
#include <vector>

#include "nff/simd/kernels.hpp"

namespace nff::ad::detail {

struct ConvGeom {
  std::size_t n, h, w, cin, ho, wo, stride;
  std::size_t rows() const { return n * ho * wo; }
  std::size_t patch() const { return 9 * cin; }
};

inline std::size_t conv_out(std::size_t in, std::size_t stride) { return (in - 1) / stride + 1; }

// cols[(b, oy, ox), (ky, kx, ci)] = x[b, oy*s + ky - 1, ox*s + kx - 1, ci] (zero outside)
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t patch = g.patch();
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        T* row = cols + ((b * g.ho + oy) * g.wo + ox) * patch;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const long iy = long(oy * g.stride + ky) - 1;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long ix = long(ox * g.stride + kx) - 1;
            T* dst = row + (ky * 3 + kx) * g.cin;
            if (iy < 0 || ix < 0 || iy >= long(g.h) || ix >= long(g.w)) {
              for (std::size_t c = 0; c < g.cin; ++c) dst[c] = T(0);
            } else {
              const T* src = x + ((b * g.h + std::size_t(iy)) * g.w + std::size_t(ix)) * g.cin;
              for (std::size_t c = 0; c < g.cin; ++c) dst[c] = src[c];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch rows back into x (accumulating).
template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* x) {
  const std::size_t patch = g.patch();
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        const T* row = cols + ((b * g.ho + oy) * g.wo + ox) * patch;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const long iy = long(oy * g.stride + ky) - 1;
          if (iy < 0 || iy >= long(g.h)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long ix = long(ox * g.stride + kx) - 1;
            if (ix < 0 || ix >= long(g.w)) continue;
            const T* src = row + (ky * 3 + kx) * g.cin;
            T* dst = x + ((b * g.h + std::size_t(iy)) * g.w + std::size_t(ix)) * g.cin;
            for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  }
  return t;
}

// C[M,N] (+)= A[M,K] * B[K,N], all row-major.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  simd::GemmArgs<T> g;
  g.m = m, g.n = n, g.k = k;
  g.a = a, g.a_row = k, g.a_col = 1;
  g.b = b, g.ldb = n;
  g.c = c, g.ldc = n;
  g.accumulate = accumulate;
  simd::gemm(g);
}

// C[M,N] (+)= A^T * B with A stored [K, M].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  simd::GemmArgs<T> g;
  g.m = m, g.n = n, g.k = k;
  g.a = a, g.a_row = 1, g.a_col = m;
  g.b = b, g.ldb = n;
  g.c = c, g.ldc = n;
  g.accumulate = accumulate;
  simd::gemm(g);
}

// C[M,N] (+)= A[M,K] * B^T with B stored [N, K].
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const auto bt = transpose(b, n, k);
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

}  // namespace nff::ad::detail
