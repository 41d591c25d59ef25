#include "hypkit/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hypkit/errors.hpp"

namespace hypkit {

Table Table::from_rows(const std::vector<std::vector<double>>& rows) {
  Table t;
  t.rows = rows.size();
  t.cols = rows.empty() ? 0 : rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != t.cols) throw ShapeError("table rows differ in length");
    t.values.insert(t.values.end(), r.begin(), r.end());
  }
  return t;
}

TwoWayAnova two_way_anova(const Table& x) {
  const std::size_t n = x.rows, k = x.cols;
  if (x.values.size() != n * k) throw ShapeError("table size does not match its extents");
  if (n < 2 || k < 2) throw ShapeError("two-way ANOVA needs at least 2 rows and 2 columns");
  for (double v : x.values)
    if (!std::isfinite(v)) throw DataError("table contains a missing or non-finite cell");
  const double grand = std::accumulate(x.values.begin(), x.values.end(), 0.0) /
                       static_cast<double>(n * k);
  std::vector<double> rm(n, 0), cm(k, 0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      rm[r] += x.at(r, c) / static_cast<double>(k);
      cm[c] += x.at(r, c) / static_cast<double>(n);
    }
  double ssr = 0, ssc = 0, sse = 0;
  for (double m : rm) ssr += (m - grand) * (m - grand);
  ssr *= static_cast<double>(k);
  for (double m : cm) ssc += (m - grand) * (m - grand);
  ssc *= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      const double e = x.at(r, c) - rm[r] - cm[c] + grand;
      sse += e * e;
    }
  TwoWayAnova a;
  a.n = n;
  a.k = k;
  a.ms_rows = ssr / static_cast<double>(n - 1);
  a.ms_cols = ssc / static_cast<double>(k - 1);
  a.ms_error = sse / static_cast<double>((n - 1) * (k - 1));
  return a;
}

ICCResult icc_a1(const Table& x) {
  if (x.rows < 3 || x.cols < 2) throw ShapeError("ICC(A,1) needs at least 3 subjects and 2 raters");
  const TwoWayAnova a = two_way_anova(x);
  const double n = static_cast<double>(a.n), k = static_cast<double>(a.k);
  const double msr = a.ms_rows, msc = a.ms_cols, mse = a.ms_error;
  const double denom = msr + (k - 1) * mse + k / n * (msc - mse);
  if (!(msr + msc + mse > 0) || denom == 0)
    throw DegenerateError("ICC is undefined for a table without variance");
  ICCResult out;
  out.estimate = (msr - mse) / denom;
  if (mse == 0) {
    out.ci_low = out.ci_high = out.estimate;
    return out;
  }
  // F-based interval with Satterthwaite degrees of freedom.
  const double icc = out.estimate;
  const double fj = msc / mse;
  const double df_resid = (n - 1) * (k - 1);
  const double vn = df_resid * std::pow(k * icc * fj + n * (1 + (k - 1) * icc) - k * icc, 2);
  const double vd = (k - 1) * k * k * icc * icc * fj * fj +
                    std::pow(n * (1 + (k - 1) * icc) - k * icc, 2);
  const double v = vn / vd;
  const double alpha = 0.05;
  if (!(v > 0) || !std::isfinite(v)) {
    out.ci_low = out.ci_high = out.estimate;
    return out;
  }
  const double fu =
      boost::math::quantile(boost::math::fisher_f_distribution<double>(n - 1, v), 1 - alpha / 2);
  const double fl =
      boost::math::quantile(boost::math::fisher_f_distribution<double>(v, n - 1), 1 - alpha / 2);
  const double mid = k * msc + (k * n - k - n) * mse;
  out.ci_low = n * (msr - fu * mse) / (fu * mid + n * msr);
  out.ci_high = n * (fl * msr - mse) / (mid + n * fl * msr);
  out.ci_low = std::min(out.ci_low, out.estimate);
  out.ci_high = std::max(out.ci_high, out.estimate);
  return out;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i] - y[i];
    if (!std::isfinite(v)) throw DataError("non-finite paired value");
    if (v != 0) d.push_back(v);
  }
  WilcoxonResult r;
  r.n = d.size();
  if (d.empty()) return r;

  // Average ranks of |d|, kept doubled so they stay integral.
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<long> rank2(d.size());
  double tie_term = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const long t = static_cast<long>(j - i + 1);
    const long doubled = static_cast<long>(i + 1 + j + 1);  // 2 * mean of ranks i+1..j+1
    for (std::size_t m = i; m <= j; ++m) rank2[order[m]] = doubled;
    tie_term += static_cast<double>(t * t * t - t);
    i = j + 1;
  }
  long w2 = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0) w2 += rank2[i];
  r.w_plus = static_cast<double>(w2) / 2.0;
  const std::size_t n = d.size();

  if (n <= 25) {
    r.exact = true;
    const long total = std::accumulate(rank2.begin(), rank2.end(), 0L);
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1;
    long reach = 0;
    for (long rk : rank2) {
      for (long s = reach; s >= 0; --s)
        if (ways[s] != 0) ways[s + rk] += ways[s];
      reach += rk;
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    double le = 0, ge = 0;
    for (long s = 0; s <= total; ++s) {
      if (s <= w2) le += ways[s];
      if (s >= w2) ge += ways[s];
    }
    r.p_value = std::min(1.0, 2.0 * std::min(le, ge) / all);
    return r;
  }

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1) / 4.0;
  const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
  if (!(var > 0)) {
    r.p_value = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
  const boost::math::normal_distribution<double> normal;
  r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(normal, z)));
  return r;
}

std::vector<double> bonferroni(std::span<const double> pvals) {
  std::vector<double> out;
  const double m = static_cast<double>(pvals.size());
  for (double p : pvals) {
    if (!(p >= 0 && p <= 1)) throw DataError("p-value outside [0, 1]");
    out.push_back(std::min(1.0, p * m));
  }
  return out;
}

void write_significance_csv(const std::filesystem::path& path, std::vector<SignificanceRow> rows) {
  std::vector<double> raw;
  for (const auto& r : rows) raw.push_back(r.p_raw);
  const auto corrected = bonferroni(raw);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].p_corrected = corrected[i];
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.precision(10);
  out << "comparison,metric,p_raw,p_corrected\n";
  for (const auto& r : rows)
    out << r.comparison << ',' << r.metric << ',' << r.p_raw << ',' << r.p_corrected << '\n';
}

}  // namespace hypkit
