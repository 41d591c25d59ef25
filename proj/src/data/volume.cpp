#include "hypkit/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hypkit/errors.hpp"

namespace hypkit {

namespace {

void check_grid(const Dims3& dims, double voxel, std::size_t len, const char* what) {
  if (dims.x == 0 || dims.y == 0 || dims.z == 0)
    throw ShapeError(std::string(what) + ": empty dimensions");
  if (!(voxel > 0.0) || !std::isfinite(voxel))
    throw ShapeError(std::string(what) + ": voxel size must be positive");
  if (len != dims.count())
    throw ShapeError(std::string(what) + ": data length does not match dims");
}

}  // namespace

Volume3D Volume3D::create(Dims3 dims, double voxel_size_mm, float fill) {
  Volume3D v{dims, voxel_size_mm, std::vector<float>(dims.count(), fill)};
  v.validate();
  return v;
}

void Volume3D::validate() const { check_grid(dims, voxel_size_mm, data.size(), "Volume3D"); }

LabelMap3D LabelMap3D::create(Dims3 dims, double voxel_size_mm, std::uint16_t fill) {
  LabelMap3D m{dims, voxel_size_mm, std::vector<std::uint16_t>(dims.count(), fill)};
  m.validate();
  return m;
}

void LabelMap3D::validate() const {
  check_grid(dims, voxel_size_mm, labels.size(), "LabelMap3D");
}

std::uint16_t LabelMap3D::max_label() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

ProbabilityVolume ProbabilityVolume::create(std::size_t class_count, Dims3 dims,
                                            double voxel_size_mm, float fill) {
  if (class_count == 0) throw ShapeError("ProbabilityVolume: zero classes");
  ProbabilityVolume p{class_count, dims, voxel_size_mm,
                      std::vector<float>(class_count * dims.count(), fill)};
  check_grid(dims, voxel_size_mm, p.data.size() / class_count, "ProbabilityVolume");
  return p;
}

double ProbabilityVolume::max_normalization_error() const {
  const std::size_t n = dims.count();
  double worst = 0;
  for (std::size_t v = 0; v < n; ++v) {
    double s = 0;
    for (std::size_t c = 0; c < class_count; ++c) s += data[c * n + v];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

Volume3D normalize_intensity(const Volume3D& v, double quantile) {
  v.validate();
  if (!(quantile > 0 && quantile <= 1)) throw UsageError("quantile must be in (0, 1]");
  std::vector<float> sorted = v.data;
  const auto rank = static_cast<std::size_t>(
      std::min<double>(std::ceil(quantile * static_cast<double>(sorted.size())), sorted.size()));
  const auto nth = sorted.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(rank, 1) - 1);
  std::nth_element(sorted.begin(), nth, sorted.end());
  const float ref = *nth;
  if (!(ref > 0)) return v;
  Volume3D out = v;
  for (auto& x : out.data) x /= ref;
  return out;
}

LabelMap3D argmax_labels(const ProbabilityVolume& p) {
  auto out = LabelMap3D::create(p.dims, p.voxel_size_mm);
  const std::size_t n = p.dims.count();
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    float bv = p.data[v];
    for (std::size_t c = 1; c < p.class_count; ++c) {
      const float x = p.data[c * n + v];
      if (x > bv) {
        bv = x;
        best = c;
      }
    }
    out.labels[v] = static_cast<std::uint16_t>(best);
  }
  return out;
}

ProbabilityVolume one_hot(const LabelMap3D& labels, std::size_t class_count) {
  auto p = ProbabilityVolume::create(class_count, labels.dims, labels.voxel_size_mm);
  const std::size_t n = labels.dims.count();
  for (std::size_t v = 0; v < n; ++v) {
    if (labels.labels[v] >= class_count)
      throw DataError("one_hot: label " + std::to_string(labels.labels[v]) +
                      " outside class range");
    p.data[labels.labels[v] * n + v] = 1.0f;
  }
  return p;
}

MultiModalSample::MultiModalSample(std::optional<Volume3D> t1,
                                   std::optional<Volume3D> t2, LabelMap3D gt)
    : t1_(std::move(t1)), t2_(std::move(t2)), gt_(std::move(gt)) {
  if (!t1_ && !t2_) throw UsageError("MultiModalSample: no modality present");
  gt_.validate();
  for (const auto* v : {t1_ ? &*t1_ : nullptr, t2_ ? &*t2_ : nullptr}) {
    if (!v) continue;
    v->validate();
    if (!(v->dims == gt_.dims) || v->voxel_size_mm != gt_.voxel_size_mm)
      throw ShapeError("MultiModalSample: modality grid differs from label grid");
  }
}

MultiModalSample MultiModalSample::restricted(Availability use) const {
  if (!use.any()) throw UsageError("no modality requested");
  if (use.t1 && !t1_) throw UsageError("T1 requested but not available");
  if (use.t2 && !t2_) throw UsageError("T2 requested but not available");
  return MultiModalSample(use.t1 ? t1_ : std::nullopt, use.t2 ? t2_ : std::nullopt,
                          gt_);
}

MultiModalSample MultiModalSample::intensity_normalized() const {
  std::optional<Volume3D> t1, t2;
  if (t1_) t1 = normalize_intensity(*t1_);
  if (t2_) t2 = normalize_intensity(*t2_);
  return MultiModalSample(std::move(t1), std::move(t2), gt_);
}

}  // namespace hypkit
