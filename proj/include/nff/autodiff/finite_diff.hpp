#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "nff/error.hpp"
#include "nff/tensor.hpp"

namespace nff::ad {

/// Central-difference estimate (f(θ+ε e_i) − f(θ−ε e_i)) / 2ε for every coordinate.
Tensor<double> finite_difference_gradient(const std::function<double(const Tensor<double>&)>& f,
                                          const Tensor<double>& theta, double eps);

/// Same estimate restricted to the listed coordinates; `theta` is restored before returning.
std::vector<double> finite_difference_at(const std::function<double()>& f, std::span<double> theta,
                                         std::span<const std::size_t> coords, double eps);

/// |a − b| / max(|a|, |b|, floor); the floor keeps near-zero pairs from dominating.
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace nff::ad
