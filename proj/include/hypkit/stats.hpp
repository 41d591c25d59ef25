#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hypkit {

// n x k table, row-major: subjects in rows, raters (or sessions) in columns.
struct Table {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  static Table from_rows(const std::vector<std::vector<double>>& rows);
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct TwoWayAnova {
  double ms_rows = 0;
  double ms_cols = 0;
  double ms_error = 0;
  std::size_t n = 0;
  std::size_t k = 0;
};

TwoWayAnova two_way_anova(const Table& x);

struct ICCResult {
  double estimate = 0;
  double ci_low = 0;
  double ci_high = 0;
};

// Two-way, absolute-agreement, single-measure ICC with its F-based 95%
// interval. Needs n >= 3, k >= 2; DegenerateError for zero total variance.
ICCResult icc_a1(const Table& x);

struct WilcoxonResult {
  double w_plus = 0;  // sum of ranks of positive differences
  std::size_t n = 0;  // nonzero differences used
  bool exact = false;
  double p_value = 1;
};

// Two-sided paired signed-rank test. Zero differences are dropped; exact
// null distribution for n <= 25 (average ranks for ties), otherwise a normal
// approximation with tie and continuity correction. p = 1 when every
// difference is zero.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

// min(1, p * m) per entry.
std::vector<double> bonferroni(std::span<const double> pvals);

struct SignificanceRow {
  std::string comparison;
  std::string metric;
  double p_raw = 1;
  double p_corrected = 1;
};

// Fills p_corrected over all rows and writes
// comparison,metric,p_raw,p_corrected.
void write_significance_csv(const std::filesystem::path& path, std::vector<SignificanceRow> rows);

}  // namespace hypkit
