#include "hypkit/gradcheck.hpp"

#include <cmath>

#include "hypkit/errors.hpp"

namespace hypkit {

template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(Tensor<T>&)>& f, Tensor<T>& x,
                           double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw UsageError("finite_diff_grad: eps must lie in [1e-7, 1e-3]");
  auto out = Tensor<T>::zeros(x.shape());
  auto data = x.data();
  auto grad = out.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const T orig = data[i];
    data[i] = static_cast<T>(orig + eps);
    const double plus = f(x);
    data[i] = static_cast<T>(orig - eps);
    const double minus = f(x);
    data[i] = orig;
    grad[i] = static_cast<T>((plus - minus) / (2.0 * eps));
  }
  return out;
}

template <typename T>
FiniteDiffProbe<T> finite_diff_probe(const std::function<T(Tensor<T>&)>& f, Tensor<T>& x,
                                     double eps, double kink_tol) {
  if (!(eps >= 2e-7 && eps <= 1e-3))
    throw UsageError("finite_diff_probe: eps must lie in [2e-7, 1e-3]");
  FiniteDiffProbe<T> out;
  out.grad = Tensor<T>::zeros(x.shape());
  out.kink.assign(x.numel(), false);
  auto data = x.data();
  auto grad = out.grad.data();
  auto central = [&](std::size_t i, double h) {
    const T orig = data[i];
    data[i] = static_cast<T>(orig + h);
    const double plus = f(x);
    data[i] = static_cast<T>(orig - h);
    const double minus = f(x);
    data[i] = orig;
    return (plus - minus) / (2.0 * h);
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double g = central(i, eps);
    const double g_half = central(i, eps / 2);
    grad[i] = static_cast<T>(g);
    if (std::abs(g - g_half) > kink_tol * (1.0 + std::abs(g))) {
      out.kink[i] = true;
      ++out.kink_count;
    }
  }
  return out;
}

template <typename T>
double relative_error(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    diff += d * d;
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

template Tensor<float> finite_diff_grad(const std::function<float(Tensor<float>&)>&,
                                        Tensor<float>&, double);
template Tensor<double> finite_diff_grad(
    const std::function<double(Tensor<double>&)>&, Tensor<double>&, double);
template FiniteDiffProbe<float> finite_diff_probe(const std::function<float(Tensor<float>&)>&,
                                                  Tensor<float>&, double, double);
template FiniteDiffProbe<double> finite_diff_probe(
    const std::function<double(Tensor<double>&)>&, Tensor<double>&, double, double);
template double relative_error(std::span<const float>, std::span<const float>);
template double relative_error(std::span<const double>, std::span<const double>);

}  // namespace hypkit
