#include "nff/simd/kernels.hpp"

#include <algorithm>

namespace nff::simd::scalar {

template <typename T>
void gemm(const GemmArgs<T>& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    T* crow = g.c + i * g.ldc;
    if (!g.accumulate) std::fill(crow, crow + g.n, T(0));
    for (std::size_t k = 0; k < g.k; ++k) {
      const T aik = g.a[i * g.a_row + k * g.a_col];
      const T* brow = g.b + k * g.ldb;
      for (std::size_t j = 0; j < g.n; ++j) crow[j] += aik * brow[j];
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template void gemm<float>(const GemmArgs<float>&);
template void gemm<double>(const GemmArgs<double>&);
template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float, const float*, float*, std::size_t);
template void axpy<double>(double, const double*, double*, std::size_t);

}  // namespace nff::simd::scalar
