#include "hypkit/resample.hpp"

#include <algorithm>
#include <cmath>

#include "hypkit/errors.hpp"

namespace hypkit {

namespace {

struct AxisMap {
  std::vector<std::size_t> lo, hi, nearest;
  std::vector<double> frac;
};

AxisMap axis_map(std::size_t src_n, double src_vs, std::size_t dst_n, double dst_vs) {
  AxisMap m;
  m.lo.resize(dst_n);
  m.hi.resize(dst_n);
  m.nearest.resize(dst_n);
  m.frac.resize(dst_n);
  const double ratio = dst_vs / src_vs;
  const double top = static_cast<double>(src_n - 1);
  for (std::size_t i = 0; i < dst_n; ++i) {
    const double centre = (static_cast<double>(i) + 0.5) * ratio;
    const double s = std::clamp(centre - 0.5, 0.0, top);
    const auto lo = static_cast<std::size_t>(std::floor(s));
    m.lo[i] = lo;
    m.hi[i] = std::min(lo + 1, src_n - 1);
    m.frac[i] = s - static_cast<double>(lo);
    m.nearest[i] = std::min(static_cast<std::size_t>(std::floor(centre)), src_n - 1);
  }
  return m;
}

void check_target(double target) {
  if (!(target > 0.0) || !std::isfinite(target))
    throw ShapeError("target voxel size must be positive");
}

// Trilinear sample of a channel laid out x-fastest on `sd`.
void trilinear(const float* src, const Dims3& sd, float* dst, const Dims3& dd,
               const AxisMap& mx, const AxisMap& my, const AxisMap& mz) {
  for (std::size_t k = 0; k < dd.z; ++k) {
    const double fz = mz.frac[k];
    for (std::size_t j = 0; j < dd.y; ++j) {
      const double fy = my.frac[j];
      const float* r00 = src + sd.index(0, my.lo[j], mz.lo[k]);
      const float* r01 = src + sd.index(0, my.hi[j], mz.lo[k]);
      const float* r10 = src + sd.index(0, my.lo[j], mz.hi[k]);
      const float* r11 = src + sd.index(0, my.hi[j], mz.hi[k]);
      float* out = dst + dd.index(0, j, k);
      for (std::size_t i = 0; i < dd.x; ++i) {
        const double fx = mx.frac[i];
        const std::size_t a = mx.lo[i], b = mx.hi[i];
        const double c00 = r00[a] + (r00[b] - r00[a]) * fx;
        const double c01 = r01[a] + (r01[b] - r01[a]) * fx;
        const double c10 = r10[a] + (r10[b] - r10[a]) * fx;
        const double c11 = r11[a] + (r11[b] - r11[a]) * fx;
        const double c0 = c00 + (c01 - c00) * fy;
        const double c1 = c10 + (c11 - c10) * fy;
        out[i] = static_cast<float>(c0 + (c1 - c0) * fz);
      }
    }
  }
}

template <typename V>
void nearest(const V* src, const Dims3& sd, V* dst, const Dims3& dd, const AxisMap& mx,
             const AxisMap& my, const AxisMap& mz) {
  for (std::size_t k = 0; k < dd.z; ++k)
    for (std::size_t j = 0; j < dd.y; ++j) {
      const V* row = src + sd.index(0, my.nearest[j], mz.nearest[k]);
      V* out = dst + dd.index(0, j, k);
      for (std::size_t i = 0; i < dd.x; ++i) out[i] = row[mx.nearest[i]];
    }
}

}  // namespace

Dims3 resampled_dims(const Dims3& dims, double source, double target) {
  check_target(target);
  Dims3 out;
  for (int a = 0; a < 3; ++a) {
    const double v = std::round(static_cast<double>(dims[a]) * source / target);
    if (v < 1.0)
      throw ShapeError("resampling to " + std::to_string(target) + " mm empties an axis");
    (a == 0 ? out.x : a == 1 ? out.y : out.z) = static_cast<std::size_t>(v);
  }
  return out;
}

Volume3D resample_to_grid(const Volume3D& v, const Dims3& dims, double target,
                          ResampleMode mode) {
  v.validate();
  check_target(target);
  if (dims.count() == 0) throw ShapeError("resampling to an empty grid");
  if (dims == v.dims && target == v.voxel_size_mm) return v;
  auto out = Volume3D::create(dims, target);
  const auto mx = axis_map(v.dims.x, v.voxel_size_mm, dims.x, target);
  const auto my = axis_map(v.dims.y, v.voxel_size_mm, dims.y, target);
  const auto mz = axis_map(v.dims.z, v.voxel_size_mm, dims.z, target);
  if (mode == ResampleMode::trilinear)
    trilinear(v.data.data(), v.dims, out.data.data(), dims, mx, my, mz);
  else
    nearest(v.data.data(), v.dims, out.data.data(), dims, mx, my, mz);
  return out;
}

Volume3D resample_volume(const Volume3D& v, double target, ResampleMode mode) {
  return resample_to_grid(v, resampled_dims(v.dims, v.voxel_size_mm, target), target, mode);
}

LabelMap3D resample_labels_to_grid(const LabelMap3D& m, const Dims3& dims, double target) {
  m.validate();
  check_target(target);
  if (dims.count() == 0) throw ShapeError("resampling to an empty grid");
  if (dims == m.dims && target == m.voxel_size_mm) return m;
  auto out = LabelMap3D::create(dims, target);
  const auto mx = axis_map(m.dims.x, m.voxel_size_mm, dims.x, target);
  const auto my = axis_map(m.dims.y, m.voxel_size_mm, dims.y, target);
  const auto mz = axis_map(m.dims.z, m.voxel_size_mm, dims.z, target);
  nearest(m.labels.data(), m.dims, out.labels.data(), dims, mx, my, mz);
  return out;
}

LabelMap3D resample_labels(const LabelMap3D& m, double target) {
  return resample_labels_to_grid(m, resampled_dims(m.dims, m.voxel_size_mm, target), target);
}

ProbabilityVolume upsample_probabilities(const ProbabilityVolume& p, double target,
                                         std::optional<Dims3> dims) {
  check_target(target);
  if (p.max_normalization_error() > 1e-5)
    throw DataError("probability volume is not normalized per voxel");
  const Dims3 d = dims ? *dims : resampled_dims(p.dims, p.voxel_size_mm, target);
  auto out = ProbabilityVolume::create(p.class_count, d, target);
  const auto mx = axis_map(p.dims.x, p.voxel_size_mm, d.x, target);
  const auto my = axis_map(p.dims.y, p.voxel_size_mm, d.y, target);
  const auto mz = axis_map(p.dims.z, p.voxel_size_mm, d.z, target);
  for (std::size_t c = 0; c < p.class_count; ++c)
    trilinear(p.channel(c), p.dims, out.channel(c), d, mx, my, mz);
  const std::size_t n = d.count();
  for (std::size_t v = 0; v < n; ++v) {
    double s = 0;
    for (std::size_t c = 0; c < p.class_count; ++c) s += out.data[c * n + v];
    if (s <= 0.0) continue;
    for (std::size_t c = 0; c < p.class_count; ++c)
      out.data[c * n + v] = static_cast<float>(out.data[c * n + v] / s);
  }
  return out;
}

MultiModalSample resample_sample(const MultiModalSample& s, double target) {
  std::optional<Volume3D> t1, t2;
  if (s.t1()) t1 = resample_volume(*s.t1(), target);
  if (s.t2()) t2 = resample_volume(*s.t2(), target);
  return MultiModalSample(std::move(t1), std::move(t2), resample_labels(s.gt(), target));
}

}  // namespace hypkit
