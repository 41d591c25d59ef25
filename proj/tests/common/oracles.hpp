#pragma once

// Brute-force reference implementations shared by the unit and acceptance
// tests. They are written for clarity, not speed, and share no code with
// the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "hypkit/metrics.hpp"
#include "hypkit/stats.hpp"

namespace oracle {

inline bool member(const hypkit::BinaryMask& m, long i, long j, long k) {
  const auto& d = m.dims;
  if (i < 0 || j < 0 || k < 0 || i >= long(d.x) || j >= long(d.y) || k >= long(d.z)) return false;
  return m.bits[d.index(i, j, k)] != 0;
}

// All-pairs boundary-to-set distances and a nearest-rank 95th percentile.
inline double hd95(const hypkit::BinaryMask& a, const hypkit::BinaryMask& b, double vox) {
  auto directed = [&](const hypkit::BinaryMask& from, const hypkit::BinaryMask& to) {
    const auto& d = from.dims;
    std::vector<double> dist;
    for (long k = 0; k < long(d.z); ++k)
      for (long j = 0; j < long(d.y); ++j)
        for (long i = 0; i < long(d.x); ++i) {
          if (!member(from, i, j, k)) continue;
          const bool edge = !member(from, i - 1, j, k) || !member(from, i + 1, j, k) ||
                            !member(from, i, j - 1, k) || !member(from, i, j + 1, k) ||
                            !member(from, i, j, k - 1) || !member(from, i, j, k + 1);
          if (!edge) continue;
          long best = -1;
          for (long z = 0; z < long(d.z); ++z)
            for (long y = 0; y < long(d.y); ++y)
              for (long x = 0; x < long(d.x); ++x) {
                if (!member(to, x, y, z)) continue;
                const long d2 = (x - i) * (x - i) + (y - j) * (y - j) + (z - k) * (z - k);
                if (best < 0 || d2 < best) best = d2;
              }
          dist.push_back(std::sqrt(static_cast<double>(best)) * vox);
        }
    std::sort(dist.begin(), dist.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * dist.size()));
    return dist[rank - 1];
  };
  return std::max(directed(a, b), directed(b, a));
}

// Random blob mask: a few random boxes, never empty.
inline hypkit::BinaryMask random_mask(hypkit::Dims3 d, std::mt19937_64& rng) {
  auto m = hypkit::BinaryMask::create(d);
  std::uniform_int_distribution<int> boxes(1, 3);
  const int nb = boxes(rng);
  for (int b = 0; b < nb; ++b) {
    std::size_t lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      std::uniform_int_distribution<std::size_t> u(0, d[a] - 1);
      lo[a] = u(rng);
      hi[a] = std::min(d[a] - 1, lo[a] + u(rng) % 4);
    }
    for (std::size_t k = lo[2]; k <= hi[2]; ++k)
      for (std::size_t j = lo[1]; j <= hi[1]; ++j)
        for (std::size_t i = lo[0]; i <= hi[0]; ++i) m.bits[d.index(i, j, k)] = 1;
  }
  // Sprinkle a few isolated voxels.
  std::bernoulli_distribution coin(0.03);
  for (auto& v : m.bits)
    if (coin(rng)) v = 1;
  return m;
}

// ICC(A,1) from an explicit two-way mean-squares decomposition.
inline double icc_a1(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size(), k = x[0].size();
  double grand = 0;
  for (const auto& r : x)
    for (double v : r) grand += v;
  grand /= double(n * k);
  double ssr = 0, ssc = 0, sst = 0;
  for (const auto& r : x) {
    double m = 0;
    for (double v : r) m += v;
    m /= double(k);
    ssr += double(k) * (m - grand) * (m - grand);
  }
  for (std::size_t c = 0; c < k; ++c) {
    double m = 0;
    for (const auto& r : x) m += r[c];
    m /= double(n);
    ssc += double(n) * (m - grand) * (m - grand);
  }
  for (const auto& r : x)
    for (double v : r) sst += (v - grand) * (v - grand);
  const double msr = ssr / double(n - 1);
  const double msc = ssc / double(k - 1);
  const double mse = (sst - ssr - ssc) / double((n - 1) * (k - 1));
  return (msr - mse) / (msr + double(k - 1) * mse + double(k) / double(n) * (msc - mse));
}

// Two-sided exact signed-rank p-value by enumerating every sign assignment.
inline double wilcoxon_p(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double below = 0, tied = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) below += 1;
      if (std::abs(d[j]) == std::abs(d[i])) tied += 1;
    }
    rank[i] = below + (tied + 1) / 2.0;
  }
  double observed = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) observed += rank[i];
  double le = 0, ge = 0;
  for (std::uint64_t signs = 0; signs < (std::uint64_t{1} << n); ++signs) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (signs >> i & 1) w += rank[i];
    if (w <= observed + 1e-9) le += 1;
    if (w >= observed - 1e-9) ge += 1;
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / double(std::uint64_t{1} << n));
}

}  // namespace oracle
