#pragma once

// Dense inner-loop kernels. Every kernel has a portable scalar reference and an
// AVX2+FMA variant; the variant is picked once at runtime from CPUID and can be
// overridden with NFF_SIMD=scalar|avx2 or set_isa().

#include <cstddef>
#include <string_view>

namespace nff::simd {

enum class Isa { scalar, avx2 };

Isa detected_isa();
Isa active_isa();
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);

/// C(MxN) (+)= A(MxK) * B(KxN).
/// A is addressed as a[i*a_row + k*a_col], so a transposed operand costs nothing.
/// B and C are row-major with leading dimensions ldb / ldc.
template <typename T>
struct GemmArgs {
  std::size_t m = 0, n = 0, k = 0;
  const T* a = nullptr;
  std::size_t a_row = 0, a_col = 1;
  const T* b = nullptr;
  std::size_t ldb = 0;
  T* c = nullptr;
  std::size_t ldc = 0;
  bool accumulate = false;
};

template <typename T>
void gemm(const GemmArgs<T>& args);

template <typename T>
T dot(const T* x, const T* y, std::size_t n);

/// y += alpha * x
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);

namespace scalar {
template <typename T>
void gemm(const GemmArgs<T>& args);
template <typename T>
T dot(const T* x, const T* y, std::size_t n);
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
bool available();
void gemm(const GemmArgs<float>& args);
void gemm(const GemmArgs<double>& args);
float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2

}  // namespace nff::simd
