#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace hypkit {

// Grid extents; storage order is x fastest, then y, then z.
struct Dims3 {
  std::size_t x = 0, y = 0, z = 0;

  std::size_t count() const noexcept { return x * y * z; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return (k * y + j) * x + i;
  }
  std::size_t operator[](std::size_t axis) const noexcept {
    return axis == 0 ? x : (axis == 1 ? y : z);
  }
  bool operator==(const Dims3&) const = default;
};

struct Volume3D {
  Dims3 dims;
  double voxel_size_mm = 1.0;
  std::vector<float> data;

  static Volume3D create(Dims3 dims, double voxel_size_mm, float fill = 0.0f);
  float& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[dims.index(i, j, k)];
  }
  float at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[dims.index(i, j, k)];
  }
  // Throws ShapeError unless data matches dims and the voxel size is positive.
  void validate() const;
};

struct LabelMap3D {
  Dims3 dims;
  double voxel_size_mm = 1.0;
  std::vector<std::uint16_t> labels;

  static LabelMap3D create(Dims3 dims, double voxel_size_mm,
                           std::uint16_t fill = 0);
  std::uint16_t& at(std::size_t i, std::size_t j, std::size_t k) {
    return labels[dims.index(i, j, k)];
  }
  std::uint16_t at(std::size_t i, std::size_t j, std::size_t k) const {
    return labels[dims.index(i, j, k)];
  }
  void validate() const;
  std::uint16_t max_label() const;
};

// Per-class probabilities, class-major: data[c * dims.count() + voxel].
struct ProbabilityVolume {
  std::size_t class_count = 0;
  Dims3 dims;
  double voxel_size_mm = 1.0;
  std::vector<float> data;

  static ProbabilityVolume create(std::size_t class_count, Dims3 dims,
                                  double voxel_size_mm, float fill = 0.0f);
  float* channel(std::size_t c) { return data.data() + c * dims.count(); }
  const float* channel(std::size_t c) const {
    return data.data() + c * dims.count();
  }
  // Largest |sum_c p - 1| over voxels.
  double max_normalization_error() const;
};

// Per-voxel argmax; ties resolve to the lowest class id.
LabelMap3D argmax_labels(const ProbabilityVolume& p);

// One-hot probabilities for a label map.
ProbabilityVolume one_hot(const LabelMap3D& labels, std::size_t class_count);

// Divides intensities by their `quantile` value so volumes with different
// global gain share one scale. Returns the input unchanged when that value
// is not positive.
Volume3D normalize_intensity(const Volume3D& v, double quantile = 0.99);

struct Availability {
  bool t1 = true;
  bool t2 = true;

  bool any() const noexcept { return t1 || t2; }
  bool operator==(const Availability&) const = default;
};

class MultiModalSample {
 public:
  // Checked constructor: at least one modality, all grids identical.
  MultiModalSample(std::optional<Volume3D> t1, std::optional<Volume3D> t2,
                   LabelMap3D gt);

  const std::optional<Volume3D>& t1() const noexcept { return t1_; }
  const std::optional<Volume3D>& t2() const noexcept { return t2_; }
  const LabelMap3D& gt() const noexcept { return gt_; }
  Availability availability() const noexcept {
    return {t1_.has_value(), t2_.has_value()};
  }
  const Dims3& dims() const noexcept { return gt_.dims; }
  double voxel_size_mm() const noexcept { return gt_.voxel_size_mm; }

  // Copy restricted to the requested modalities; UsageError if a requested
  // modality is missing or the request is empty.
  MultiModalSample restricted(Availability use) const;
  // Copy with every present modality passed through normalize_intensity.
  MultiModalSample intensity_normalized() const;

 private:
  std::optional<Volume3D> t1_;
  std::optional<Volume3D> t2_;
  LabelMap3D gt_;
};

}  // namespace hypkit
