#pragma once

#include <functional>
#include <vector>

#include "hypkit/tensor.hpp"

namespace hypkit {

// Central-difference gradient of a scalar function. `f` receives `x` after
// each in-place perturbation; `x` is restored before returning.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(Tensor<T>&)>& f, Tensor<T>& x,
                           double eps);

template <typename T>
struct FiniteDiffProbe {
  Tensor<T> grad;          // central differences
  std::vector<bool> kink;  // not differentiable within eps of x
  std::size_t kink_count = 0;
};

// Central differences plus a kink flag per element. An element is flagged
// when the central differences at eps and eps/2 differ by more than
// kink_tol * (1 + |g|); on smooth functions they agree to O(eps^2).
template <typename T>
FiniteDiffProbe<T> finite_diff_probe(const std::function<T(Tensor<T>&)>& f, Tensor<T>& x,
                                     double eps, double kink_tol);

// ||a - b||_2 / max(||a||_2, ||b||_2), or 0 when both vanish.
template <typename T>
double relative_error(std::span<const T> a, std::span<const T> b);

}  // namespace hypkit
