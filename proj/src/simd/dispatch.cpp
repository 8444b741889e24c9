#include <atomic>
#include <cstdlib>
#include <string>

#include "nff/simd/kernels.hpp"

namespace nff::simd {
namespace {

Isa initial_isa() {
  const Isa best = detected_isa();
  if (const char* env = std::getenv("NFF_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && best == Isa::avx2) return Isa::avx2;
  }
  return best;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

Isa detected_isa() {
  static const Isa isa = avx2::available() ? Isa::avx2 : Isa::scalar;
  return isa;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (isa == Isa::avx2 && detected_isa() != Isa::avx2) isa = Isa::scalar;
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

template <typename T>
void gemm(const GemmArgs<T>& args) {
  if (active_isa() == Isa::avx2) {
    avx2::gemm(args);
  } else {
    scalar::gemm(args);
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  return active_isa() == Isa::avx2 ? avx2::dot(x, y, n) : scalar::dot(x, y, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  if (active_isa() == Isa::avx2) {
    avx2::axpy(alpha, x, y, n);
  } else {
    scalar::axpy(alpha, x, y, n);
  }
}

template void gemm<float>(const GemmArgs<float>&);
template void gemm<double>(const GemmArgs<double>&);
template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float, const float*, float*, std::size_t);
template void axpy<double>(double, const double*, double*, std::size_t);

}  // namespace nff::simd
