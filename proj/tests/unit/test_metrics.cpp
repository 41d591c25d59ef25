#include <doctest.h>

#include <random>

#include "../common/oracles.hpp"
#include "hypkit/errors.hpp"
#include "hypkit/metrics.hpp"
#include "hypkit/phantom.hpp"
#include "hypkit/parallel.hpp"
#include "hypkit/stats.hpp"

using namespace hypkit;

namespace {

BinaryMask mask_with(Dims3 d, std::initializer_list<std::size_t> on) {
  auto m = BinaryMask::create(d);
  for (auto i : on) m.bits[i] = 1;
  return m;
}

}  // namespace

TEST_CASE("dice examples") {
  const Dims3 d{8, 1, 1};
  auto m = mask_with(d, {0, 1, 2, 3});
  CHECK(dice(m, m) == 1.0);
  CHECK(dice(m, mask_with(d, {4, 5})) == 0.0);
  CHECK(dice(m, mask_with(d, {2, 3, 4, 5})) == 0.5);
  CHECK(dice(BinaryMask::create(d), BinaryMask::create(d)) == 1.0);
  CHECK_THROWS_AS(dice(m, BinaryMask::create({4, 2, 1})), ShapeError);
}

TEST_CASE("volume similarity examples") {
  const Dims3 d{8, 1, 1};
  CHECK(volume_similarity(mask_with(d, {0, 1, 2, 3}), mask_with(d, {4, 5, 6, 7})) == 1.0);
  CHECK(volume_similarity(mask_with(d, {0, 1, 2, 3}), BinaryMask::create(d)) == 0.0);
  CHECK(volume_similarity(mask_with(d, {0, 1, 2}), mask_with(d, {0, 1, 2, 3, 4})) == 0.75);
}

TEST_CASE("hd95 examples") {
  const Dims3 d{6, 6, 6};
  auto m = mask_with(d, {d.index(1, 1, 1), d.index(2, 1, 1), d.index(1, 2, 1)});
  CHECK(hd95(m, m, 0.8) == 0.0);
  CHECK(hd95(mask_with(d, {d.index(0, 2, 2)}), mask_with(d, {d.index(3, 2, 2)}), 1.0) == 3.0);
  CHECK_THROWS_AS(hd95(m, BinaryMask::create(d), 1.0), UndefinedMetricError);
}

TEST_CASE("hd95 equals the brute-force oracle") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const Dims3 d{7 + trial % 3, 6, 5 + trial % 2};
    const auto a = oracle::random_mask(d, rng);
    const auto b = oracle::random_mask(d, rng);
    const double vox = trial % 2 ? 0.8 : 1.0;
    CHECK(hd95(a, b, vox) == oracle::hd95(a, b, vox));
  }
}

TEST_CASE("distance transform is exact on random masks") {
  std::mt19937_64 rng(5);
  const Dims3 d{6, 7, 5};
  const auto m = oracle::random_mask(d, rng);
  const auto dt = squared_distance_transform(m);
  for (long k = 0; k < 5; ++k)
    for (long j = 0; j < 7; ++j)
      for (long i = 0; i < 6; ++i) {
        long best = -1;
        for (long z = 0; z < 5; ++z)
          for (long y = 0; y < 7; ++y)
            for (long x = 0; x < 6; ++x)
              if (oracle::member(m, x, y, z)) {
                const long d2 = (x - i) * (x - i) + (y - j) * (y - j) + (z - k) * (z - k);
                if (best < 0 || d2 < best) best = d2;
              }
        CHECK(dt[d.index(i, j, k)] == best);
      }
}

TEST_CASE("nearest-rank percentile") {
  CHECK(nearest_rank_percentile({5, 1, 3, 2, 4}, 0.95) == 5);
  CHECK(nearest_rank_percentile({5, 1, 3, 2, 4}, 0.2) == 1);
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = 99 - i;
  CHECK(nearest_rank_percentile(v, 0.95) == 94);
}

TEST_CASE("icc examples") {
  auto perfect = Table::from_rows({{1, 1, 1}, {4, 4, 4}, {2, 2, 2}, {7, 7, 7}});
  CHECK(icc_a1(perfect).estimate == doctest::Approx(1.0).epsilon(1e-14));

  const std::vector<std::vector<double>> rows = {{9, 2}, {6, 1}, {8, 4}, {7, 1}, {10, 5}};
  CHECK(icc_a1(Table::from_rows(rows)).estimate == doctest::Approx(oracle::icc_a1(rows)).epsilon(1e-12));

  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  // Constant subjects, pure rater noise: the estimate scatters around 0.
  double mean_est = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> t(30, std::vector<double>(2));
    for (auto& r : t)
      for (auto& v : r) v = 5.0 + n(rng);
    mean_est += icc_a1(Table::from_rows(t)).estimate / 50;
  }
  CHECK(std::abs(mean_est) < 0.2);
  CHECK_THROWS_AS(icc_a1(Table::from_rows({{1, 1}, {1, 1}, {1, 1}})), DegenerateError);
  CHECK_THROWS(icc_a1(Table::from_rows({{1, 2}, {3, 4}})));
}

TEST_CASE("icc matches the mean-squares oracle on random tables") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 3 + trial % 7, cols = 2 + trial % 3;
    std::vector<std::vector<double>> t(rows, std::vector<double>(cols));
    for (auto& r : t) {
      const double subject = 3 * n(rng);
      for (auto& v : r) v = subject + n(rng);
    }
    const auto r = icc_a1(Table::from_rows(t));
    CHECK(std::abs(r.estimate - oracle::icc_a1(t)) < 1e-10);
    CHECK(r.ci_low <= r.estimate);
    CHECK(r.estimate <= r.ci_high);
  }
}

TEST_CASE("wilcoxon examples") {
  std::vector<double> x = {1, 2, 3}, y = {1, 2, 3};
  CHECK(wilcoxon_signed_rank(x, y).p_value == 1.0);
  std::vector<double> a = {2, 3, 5, 8, 13}, b = {1, 1, 1, 1, 1};
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK(r.exact);
  CHECK(r.p_value == doctest::Approx(0.0625).epsilon(1e-15));
  CHECK(wilcoxon_signed_rank(b, a).p_value == r.p_value);
}

TEST_CASE("wilcoxon exact p matches sign enumeration") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (std::size_t size = 1; size <= 10; ++size)
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> x(size), y(size);
      for (std::size_t i = 0; i < size; ++i) {
        x[i] = std::round(4 * n(rng)) / 2;  // coarse grid to create ties and zeros
        y[i] = std::round(4 * n(rng)) / 2 + 0.3 * trial;
      }
      CHECK(wilcoxon_signed_rank(x, y).p_value == doctest::Approx(oracle::wilcoxon_p(x, y)).epsilon(1e-14));
    }
}

TEST_CASE("bonferroni") {
  CHECK(bonferroni(std::vector<double>{0.01}) == std::vector<double>{0.01});
  const auto five = bonferroni(std::vector<double>{0.01, 0.2, 0.3, 0.4, 0.5});
  CHECK(five[0] == doctest::Approx(0.05));
  CHECK(bonferroni(std::vector<double>{0.5, 0.1, 0.1})[0] == 1.0);
}

TEST_CASE("report of a perfect prediction") {
  const auto s = generate_phantom(PhantomSpec::desk(0.8, 24), 1);
  const auto scheme = LabelScheme::phantom4();
  const auto r = evaluate_report(s.gt(), s.gt(), scheme);
  REQUIRE(r.structures.size() == 3);
  for (const auto& row : r.structures) {
    CHECK(*row.dice == 1.0);
    CHECK(*row.vs == 1.0);
    CHECK(*row.hd95_mm == 0.0);
  }
  CHECK(*r.global.dice == 1.0);
}

TEST_CASE("report of an all-background prediction") {
  const auto s = generate_phantom(PhantomSpec::desk(0.8, 24), 1);
  const auto r = evaluate_report(LabelMap3D::create(s.dims(), 0.8), s.gt(), LabelScheme::phantom4());
  for (const auto& row : r.structures) {
    CHECK(*row.dice == 0.0);
    CHECK(*row.vs == 0.0);
    CHECK_FALSE(row.hd95_mm.has_value());
  }
  CHECK(r.to_csv().find("NA") != std::string::npos);
}

TEST_CASE("region rows are the mean of their member rows") {
  auto scheme = LabelScheme::phantom4();
  const auto gt = generate_phantom(PhantomSpec::desk(0.8, 24), 1).gt();
  const auto pred = generate_phantom(PhantomSpec::desk(0.8, 24), 2).gt();
  const auto r = evaluate_report(pred, gt, scheme);
  for (const auto& region : r.regions) {
    double dsum = 0, vsum = 0;
    int n = 0;
    for (const auto& row : r.structures)
      if (row.region == region.region && row.applicable) {
        dsum += *row.dice;
        vsum += *row.vs;
        ++n;
      }
    REQUIRE(n > 0);
    CHECK(*region.dice == doctest::Approx(dsum / n).epsilon(1e-14));
    CHECK(*region.vs == doctest::Approx(vsum / n).epsilon(1e-14));
  }
}

TEST_CASE("report is independent of the worker count") {
  const auto gt = generate_phantom(PhantomSpec::desk(0.8, 24), 1).gt();
  const auto pred = generate_phantom(PhantomSpec::desk(0.8, 24), 3).gt();
  const auto a = evaluate_report(pred, gt, LabelScheme::phantom4()).to_csv();
  hypkit::set_thread_limit(1);
  const auto b = evaluate_report(pred, gt, LabelScheme::phantom4()).to_csv();
  hypkit::set_thread_limit(0);
  CHECK(a == b);
}
