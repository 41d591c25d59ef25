#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace hypkit {

// Largest relative error the suite accepts.
inline constexpr double kGradTolerance = 1e-4;
// Disagreement of the eps and eps/2 central differences that marks a kink.
inline constexpr double kKinkTolerance = 1e-6;

struct GradCheckResult {
  std::string name;
  std::uint64_t seed = 0;
  // Worst input tensor of the case. The denominator is floored at 1e-3 of
  // the case's largest gradient norm.
  double max_rel_error = 0;
  // Elements within eps of a kink (max, PReLU at zero) are excluded; more
  // than 1% of them fails the case.
  std::size_t elements = 0;
  std::size_t kinks = 0;
  bool passed() const {
    return max_rel_error < kGradTolerance && kinks * 100 <= elements;
  }
};

// Names of the checked cases: every layer op, both fusion modes, the
// combined loss, both dense-block variants and a small end-to-end network.
const std::vector<std::string>& gradient_case_names();

// One case in double precision with inputs drawn uniformly from [-1, 1].
// Projects the op output onto a random tensor so every output element
// contributes to the scalar objective. UsageError for an unknown name.
GradCheckResult run_gradient_case(const std::string& name, std::uint64_t seed,
                                  double eps = 1e-6);

struct GradSuiteOptions {
  std::size_t seeds = 10;
  std::uint64_t first_seed = 1;
  double eps = 1e-6;
  std::function<void(const GradCheckResult&)> on_result;
};

std::vector<GradCheckResult> run_gradient_suite(const GradSuiteOptions& opt = {});

}  // namespace hypkit
