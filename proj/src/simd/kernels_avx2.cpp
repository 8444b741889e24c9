// Compiled with -mavx2 -mfma. Only reached after a runtime CPUID check.

#include <immintrin.h>

#include <algorithm>

#include "nff/simd/kernels.hpp"

namespace nff::simd::avx2 {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t W = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V bcast(T x) { return _mm256_set1_ps(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t W = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V bcast(T x) { return _mm256_set1_pd(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

constexpr std::size_t kRows = 6;

// Rows [i0, i0+R) x columns [j0, j0 + 2W) of C.
template <typename S, std::size_t R>
inline void micro_2v(const GemmArgs<typename S::T>& g, std::size_t i0, std::size_t j0) {
  using V = typename S::V;
  V acc0[R], acc1[R];
  for (std::size_t r = 0; r < R; ++r) {
    if (g.accumulate) {
      acc0[r] = S::load(g.c + (i0 + r) * g.ldc + j0);
      acc1[r] = S::load(g.c + (i0 + r) * g.ldc + j0 + S::W);
    } else {
      acc0[r] = S::zero();
      acc1[r] = S::zero();
    }
  }
  const auto* arow = g.a + i0 * g.a_row;
  for (std::size_t k = 0; k < g.k; ++k) {
    const auto* bp = g.b + k * g.ldb + j0;
    const V b0 = S::load(bp);
    const V b1 = S::load(bp + S::W);
    const auto* ak = arow + k * g.a_col;
    for (std::size_t r = 0; r < R; ++r) {
      const V a = S::bcast(ak[r * g.a_row]);
      acc0[r] = S::fma(a, b0, acc0[r]);
      acc1[r] = S::fma(a, b1, acc1[r]);
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    S::store(g.c + (i0 + r) * g.ldc + j0, acc0[r]);
    S::store(g.c + (i0 + r) * g.ldc + j0 + S::W, acc1[r]);
  }
}

template <typename S, std::size_t R>
inline void micro_1v(const GemmArgs<typename S::T>& g, std::size_t i0, std::size_t j0) {
  using V = typename S::V;
  V acc[R];
  for (std::size_t r = 0; r < R; ++r) {
    acc[r] = g.accumulate ? S::load(g.c + (i0 + r) * g.ldc + j0) : S::zero();
  }
  const auto* arow = g.a + i0 * g.a_row;
  for (std::size_t k = 0; k < g.k; ++k) {
    const V b0 = S::load(g.b + k * g.ldb + j0);
    const auto* ak = arow + k * g.a_col;
    for (std::size_t r = 0; r < R; ++r) acc[r] = S::fma(S::bcast(ak[r * g.a_row]), b0, acc[r]);
  }
  for (std::size_t r = 0; r < R; ++r) S::store(g.c + (i0 + r) * g.ldc + j0, acc[r]);
}

template <typename T>
inline void tail_cols(const GemmArgs<T>& g, std::size_t i0, std::size_t rows, std::size_t j0) {
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t i = i0 + r;
    for (std::size_t j = j0; j < g.n; ++j) {
      T s = g.accumulate ? g.c[i * g.ldc + j] : T(0);
      for (std::size_t k = 0; k < g.k; ++k) s += g.a[i * g.a_row + k * g.a_col] * g.b[k * g.ldb + j];
      g.c[i * g.ldc + j] = s;
    }
  }
}

template <typename S, std::size_t R>
inline void row_strip(const GemmArgs<typename S::T>& g, std::size_t i0, std::size_t j_begin, std::size_t j_end) {
  std::size_t j = j_begin;
  for (; j + 2 * S::W <= j_end; j += 2 * S::W) micro_2v<S, R>(g, i0, j);
  for (; j + S::W <= j_end; j += S::W) micro_1v<S, R>(g, i0, j);
}

template <typename S>
void strip_dispatch(const GemmArgs<typename S::T>& g, std::size_t i0, std::size_t rows, std::size_t j_begin,
                    std::size_t j_end) {
  switch (rows) {
    case 6: row_strip<S, 6>(g, i0, j_begin, j_end); break;
    case 5: row_strip<S, 5>(g, i0, j_begin, j_end); break;
    case 4: row_strip<S, 4>(g, i0, j_begin, j_end); break;
    case 3: row_strip<S, 3>(g, i0, j_begin, j_end); break;
    case 2: row_strip<S, 2>(g, i0, j_begin, j_end); break;
    case 1: row_strip<S, 1>(g, i0, j_begin, j_end); break;
    default: break;
  }
}

template <typename S>
void gemm_impl(const GemmArgs<typename S::T>& g) {
  if (g.m == 0 || g.n == 0) return;
  const std::size_t n_vec = (g.n / S::W) * S::W;
  // Column panels keep a K x panel slice of B resident in cache across row strips.
  constexpr std::size_t kPanel = 128;
  for (std::size_t j0 = 0; j0 < n_vec; j0 += kPanel) {
    const std::size_t j1 = std::min(n_vec, j0 + kPanel);
    for (std::size_t i0 = 0; i0 < g.m; i0 += kRows) {
      strip_dispatch<S>(g, i0, std::min(kRows, g.m - i0), j0, j1);
    }
  }
  if (n_vec < g.n) tail_cols(g, 0, g.m, n_vec);
}

template <typename S>
typename S::T dot_impl(const typename S::T* x, const typename S::T* y, std::size_t n) {
  using V = typename S::V;
  V a0 = S::zero(), a1 = S::zero();
  std::size_t i = 0;
  for (; i + 2 * S::W <= n; i += 2 * S::W) {
    a0 = S::fma(S::load(x + i), S::load(y + i), a0);
    a1 = S::fma(S::load(x + i + S::W), S::load(y + i + S::W), a1);
  }
  for (; i + S::W <= n; i += S::W) a0 = S::fma(S::load(x + i), S::load(y + i), a0);
  typename S::T s = S::hsum(S::add(a0, a1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename S>
void axpy_impl(typename S::T alpha, const typename S::T* x, typename S::T* y, std::size_t n) {
  const auto a = S::bcast(alpha);
  std::size_t i = 0;
  for (; i + S::W <= n; i += S::W) S::store(y + i, S::fma(a, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

bool available() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

void gemm(const GemmArgs<float>& args) { gemm_impl<F32>(args); }
void gemm(const GemmArgs<double>& args) { gemm_impl<F64>(args); }
float dot(const float* x, const float* y, std::size_t n) { return dot_impl<F32>(x, y, n); }
double dot(const double* x, const double* y, std::size_t n) { return dot_impl<F64>(x, y, n); }
void axpy(float alpha, const float* x, float* y, std::size_t n) { axpy_impl<F32>(alpha, x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { axpy_impl<F64>(alpha, x, y, n); }

}  // namespace nff::simd::avx2
