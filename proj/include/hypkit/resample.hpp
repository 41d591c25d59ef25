#pragma once

#include <optional>

#include "hypkit/volume.hpp"

namespace hypkit {

enum class ResampleMode { trilinear, nearest };

// round(extent * source / target) per axis, at least 1; ShapeError when an
// axis would vanish.
Dims3 resampled_dims(const Dims3& dims, double source_voxel_mm, double target_voxel_mm);

// Voxel centres map through physical space: target index i samples the
// source at continuous index (i + 0.5) * target / source - 0.5, clamped to
// the source grid.
Volume3D resample_volume(const Volume3D& v, double target_voxel_mm,
                         ResampleMode mode = ResampleMode::trilinear);
Volume3D resample_to_grid(const Volume3D& v, const Dims3& dims, double target_voxel_mm,
                          ResampleMode mode = ResampleMode::trilinear);

// Label maps are only ever resampled by nearest neighbour.
LabelMap3D resample_labels(const LabelMap3D& m, double target_voxel_mm);
LabelMap3D resample_labels_to_grid(const LabelMap3D& m, const Dims3& dims,
                                   double target_voxel_mm);

// Trilinear per class, then renormalized per voxel. DataError if the input
// is not normalized within 1e-5.
ProbabilityVolume upsample_probabilities(const ProbabilityVolume& p,
                                         double target_voxel_mm,
                                         std::optional<Dims3> dims = std::nullopt);

// Intensities trilinear, labels nearest.
MultiModalSample resample_sample(const MultiModalSample& s, double target_voxel_mm);

}  // namespace hypkit
