#include "nff/autodiff/finite_diff.hpp"

#include <string>

namespace nff::ad {
namespace {

double checked(double v, std::size_t coord) {
  if (!std::isfinite(v)) throw NumericError("finite_difference: non-finite evaluation at coordinate " + std::to_string(coord));
  return v;
}

}  // namespace

Tensor<double> finite_difference_gradient(const std::function<double(const Tensor<double>&)>& f,
                                          const Tensor<double>& theta, double eps) {
  if (!(eps > 0)) contract_fail("finite_difference_gradient", "eps must be positive");
  Tensor<double> grad(theta.shape());
  Tensor<double> probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + eps;
    const double fp = checked(f(probe), i);
    probe[i] = theta[i] - eps;
    const double fm = checked(f(probe), i);
    probe[i] = theta[i];
    grad[i] = (fp - fm) / (2 * eps);
  }
  return grad;
}

std::vector<double> finite_difference_at(const std::function<double()>& f, std::span<double> theta,
                                         std::span<const std::size_t> coords, double eps) {
  if (!(eps > 0)) contract_fail("finite_difference_at", "eps must be positive");
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t c : coords) {
    if (c >= theta.size()) contract_fail("finite_difference_at", "coordinate out of range");
    const double orig = theta[c];
    theta[c] = orig + eps;
    const double fp = checked(f(), c);
    theta[c] = orig - eps;
    const double fm = checked(f(), c);
    theta[c] = orig;
    out.push_back((fp - fm) / (2 * eps));
  }
  return out;
}

}  // namespace nff::ad
