#include "hypkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "hypkit/errors.hpp"
#include "hypkit/parallel.hpp"

namespace hypkit {

namespace {

void require_same_dims(const BinaryMask& a, const BinaryMask& b) {
  if (!(a.dims == b.dims) || a.bits.size() != a.dims.count() || b.bits.size() != b.dims.count())
    throw ShapeError("masks differ in dimensions");
}

std::size_t overlap(const BinaryMask& a, const BinaryMask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += (a.bits[i] && b.bits[i]);
  return n;
}

constexpr std::int64_t kFar = std::numeric_limits<std::int64_t>::max();

// One pass of the lower-envelope transform along a line. `f` holds squared
// distances or kFar; the result overwrites `f`.
void edt_line(std::vector<std::int64_t>& f, std::vector<std::int64_t>& out,
              std::vector<long>& v, std::vector<double>& z) {
  const long n = static_cast<long>(f.size());
  long k = -1;
  for (long q = 0; q < n; ++q) {
    if (f[q] == kFar) continue;
    const double fq = static_cast<double>(f[q]) + static_cast<double>(q) * q;
    while (k >= 0) {
      const long p = v[k];
      const double s = (fq - (static_cast<double>(f[p]) + static_cast<double>(p) * p)) /
                       (2.0 * static_cast<double>(q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    if (k == 0) {
      z[k] = -std::numeric_limits<double>::infinity();
    } else {
      const long p = v[k - 1];
      z[k] = (fq - (static_cast<double>(f[p]) + static_cast<double>(p) * p)) /
             (2.0 * static_cast<double>(q - p));
    }
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kFar);
  } else {
    long j = 0;
    for (long q = 0; q < n; ++q) {
      while (j < k && z[j + 1] < static_cast<double>(q)) ++j;
      const long d = q - v[j];
      out[q] = d * d + f[v[j]];
      // Exact minimum between neighbours guards against rounding in z.
      if (j < k) {
        const long d2 = q - v[j + 1];
        out[q] = std::min(out[q], d2 * d2 + f[v[j + 1]]);
      }
      if (j > 0) {
        const long d0 = q - v[j - 1];
        out[q] = std::min(out[q], d0 * d0 + f[v[j - 1]]);
      }
    }
  }
  f.swap(out);
}

}  // namespace

BinaryMask BinaryMask::create(Dims3 dims) {
  BinaryMask m;
  m.dims = dims;
  m.bits.assign(dims.count(), 0);
  return m;
}

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

BinaryMask mask_of(const LabelMap3D& labels, std::uint16_t label) {
  BinaryMask m = BinaryMask::create(labels.dims);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) m.bits[i] = labels.labels[i] == label;
  return m;
}

double dice(const BinaryMask& m, const BinaryMask& p) {
  require_same_dims(m, p);
  const double a = static_cast<double>(m.count()), b = static_cast<double>(p.count());
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(overlap(m, p)) / (a + b);
}

double volume_similarity(const BinaryMask& m, const BinaryMask& p) {
  require_same_dims(m, p);
  const double a = static_cast<double>(m.count()), b = static_cast<double>(p.count());
  if (a + b == 0) return 1.0;
  return 1.0 - std::abs(a - b) / (a + b);
}

BinaryMask boundary(const BinaryMask& mask) {
  const Dims3 d = mask.dims;
  BinaryMask out = BinaryMask::create(d);
  auto inside = [&](long i, long j, long k) {
    if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(d.x) || j >= static_cast<long>(d.y) ||
        k >= static_cast<long>(d.z))
      return false;
    return mask.bits[d.index(i, j, k)] != 0;
  };
  for (long k = 0; k < static_cast<long>(d.z); ++k)
    for (long j = 0; j < static_cast<long>(d.y); ++j)
      for (long i = 0; i < static_cast<long>(d.x); ++i) {
        if (!inside(i, j, k)) continue;
        const bool edge = !inside(i - 1, j, k) || !inside(i + 1, j, k) || !inside(i, j - 1, k) ||
                          !inside(i, j + 1, k) || !inside(i, j, k - 1) || !inside(i, j, k + 1);
        out.bits[d.index(i, j, k)] = edge;
      }
  return out;
}

std::vector<std::int64_t> squared_distance_transform(const BinaryMask& mask) {
  const Dims3 d = mask.dims;
  std::vector<std::int64_t> g(d.count());
  bool any = false;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = mask.bits[i] ? 0 : kFar;
    any |= mask.bits[i] != 0;
  }
  if (!any) return std::vector<std::int64_t>(d.count(), -1);
  const std::size_t longest = std::max({d.x, d.y, d.z});
  std::vector<std::int64_t> line, out;
  std::vector<long> v(longest);
  std::vector<double> z(longest + 1);
  auto pass = [&](std::size_t n, std::size_t count, auto index) {
    line.resize(n);
    out.resize(n);
    for (std::size_t l = 0; l < count; ++l) {
      for (std::size_t q = 0; q < n; ++q) line[q] = g[index(l, q)];
      edt_line(line, out, v, z);
      for (std::size_t q = 0; q < n; ++q) g[index(l, q)] = line[q];
    }
  };
  pass(d.x, d.y * d.z, [&](std::size_t l, std::size_t q) { return l * d.x + q; });
  pass(d.y, d.x * d.z, [&](std::size_t l, std::size_t q) {
    return d.index(l % d.x, q, l / d.x);
  });
  pass(d.z, d.x * d.y, [&](std::size_t l, std::size_t q) {
    return d.index(l % d.x, l / d.x, q);
  });
  return g;
}

std::vector<double> directed_boundary_distances(const BinaryMask& from, const BinaryMask& to,
                                                double voxel_size_mm) {
  require_same_dims(from, to);
  if (to.count() == 0) throw UndefinedMetricError("distance to an empty mask is undefined");
  const auto dt = squared_distance_transform(to);
  const auto edge = boundary(from);
  std::vector<double> out;
  for (std::size_t i = 0; i < edge.bits.size(); ++i)
    if (edge.bits[i]) out.push_back(std::sqrt(static_cast<double>(dt[i])) * voxel_size_mm);
  return out;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw UndefinedMetricError("percentile of no values");
  if (!(q > 0 && q <= 1)) throw UsageError("percentile must be in (0, 1]");
  std::sort(values.begin(), values.end());
  double r = q * static_cast<double>(values.size());
  if (std::abs(r - std::round(r)) < 1e-9 * std::max(1.0, r)) r = std::round(r);
  const auto rank = static_cast<std::size_t>(std::ceil(r));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

double hd95(const BinaryMask& m, const BinaryMask& p, double voxel_size_mm) {
  require_same_dims(m, p);
  if (m.count() == 0 || p.count() == 0)
    throw UndefinedMetricError("hd95 is undefined for an empty mask");
  if (!(voxel_size_mm > 0)) throw ShapeError("voxel size must be positive");
  return std::max(nearest_rank_percentile(directed_boundary_distances(m, p, voxel_size_mm), 0.95),
                  nearest_rank_percentile(directed_boundary_distances(p, m, voxel_size_mm), 0.95));
}

namespace {

MetricRow row_for(const std::string& name, const std::string& region, const BinaryMask& p,
                  const BinaryMask& g, double voxel) {
  MetricRow r;
  r.name = name;
  r.region = region;
  if (p.count() == 0 && g.count() == 0) {
    r.applicable = false;
    return r;
  }
  r.dice = dice(p, g);
  r.vs = volume_similarity(p, g);
  if (p.count() > 0 && g.count() > 0) r.hd95_mm = hd95(p, g, voxel);
  return r;
}

MetricRow mean_row(const std::string& name, const std::string& region,
                   const std::vector<const MetricRow*>& rows) {
  MetricRow out;
  out.name = name;
  out.region = region;
  double d = 0, v = 0, h = 0;
  std::size_t nd = 0, nh = 0;
  for (const auto* r : rows) {
    if (!r->applicable) continue;
    d += *r->dice;
    v += *r->vs;
    ++nd;
    if (r->hd95_mm) {
      h += *r->hd95_mm;
      ++nh;
    }
  }
  if (nd == 0) {
    out.applicable = false;
    return out;
  }
  out.dice = d / static_cast<double>(nd);
  out.vs = v / static_cast<double>(nd);
  if (nh > 0) out.hd95_mm = h / static_cast<double>(nh);
  return out;
}

BinaryMask union_mask(const LabelMap3D& labels, const std::vector<std::uint16_t>& ids) {
  BinaryMask m = BinaryMask::create(labels.dims);
  std::vector<bool> member(65536, false);
  for (auto id : ids) member[id] = true;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) m.bits[i] = member[labels.labels[i]];
  return m;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream ss;
  ss.precision(10);
  ss << *v;
  return ss.str();
}

}  // namespace

MetricReport evaluate_report(const LabelMap3D& pred, const LabelMap3D& gt,
                             const LabelScheme& scheme, RegionPooling pooling) {
  if (!(pred.dims == gt.dims)) throw ShapeError("prediction and reference grids differ");
  if (pred.voxel_size_mm != gt.voxel_size_mm)
    throw ShapeError("prediction and reference voxel sizes differ");
  for (const auto* m : {&pred, &gt})
    if (m->max_label() >= scheme.class_count())
      throw DataError("label map contains a class outside scheme " + scheme.name());
  const double voxel = gt.voxel_size_mm;
  MetricReport report;
  const auto& structures = scheme.structures();
  report.structures.resize(structures.size());
  parallel_for(structures.size(), [&](std::size_t i) {
    const auto& s = structures[i];
    report.structures[i] =
        row_for(s.name, to_string(s.region), mask_of(pred, s.id), mask_of(gt, s.id), voxel);
  });

  std::vector<std::uint16_t> all;
  for (const auto& s : scheme.structures()) all.push_back(s.id);
  for (Region region : {Region::hypothalamic, Region::optic, Region::others}) {
    const auto members = scheme.region_members(region);
    if (members.empty()) continue;
    const std::string name = to_string(region);
    if (pooling == RegionPooling::pooled_voxels) {
      report.regions.push_back(
          row_for(name, name, union_mask(pred, members), union_mask(gt, members), voxel));
    } else {
      std::vector<const MetricRow*> rows;
      for (auto id : members) rows.push_back(&report.structures[id - 1]);
      report.regions.push_back(mean_row(name, name, rows));
    }
  }
  if (pooling == RegionPooling::pooled_voxels) {
    report.global = row_for("global", "all", union_mask(pred, all), union_mask(gt, all), voxel);
  } else {
    std::vector<const MetricRow*> rows;
    for (const auto& r : report.structures) rows.push_back(&r);
    report.global = mean_row("global", "all", rows);
  }
  return report;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "structure,region,dice,vs,hd95_mm\n";
  auto line = [&](const MetricRow& r) {
    out << r.name << ',' << r.region << ',' << fmt(r.dice) << ',' << fmt(r.vs) << ','
        << fmt(r.hd95_mm) << '\n';
  };
  for (const auto& r : structures) line(r);
  for (const auto& r : regions) line(r);
  line(global);
  return out.str();
}

void MetricReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_csv();
}

}  // namespace hypkit
