#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include "hypkit/labels.hpp"
#include "hypkit/model.hpp"
#include "hypkit/volume.hpp"

namespace hypkit {

// Softmax probabilities of one plane network assembled into a volume, in the
// label space of that plane. Eval mode, no graph recording.
template <typename T>
ProbabilityVolume predict_plane(PlaneNet<T>& net, const MultiModalSample& s,
                                Availability use, std::size_t slices_per_batch = 8);

// Unified sagittal classes -> full classes. Each unified probability is
// copied into every full class it stands for; no renormalization.
ProbabilityVolume remap_sagittal(const ProbabilityVolume& unified, const LabelScheme& scheme);

struct Segmentation {
  LabelMap3D labels;
  ProbabilityVolume probabilities;
};

// Weighted average of the three views, renormalized per voxel, argmax with
// ties to the lowest class id.
Segmentation aggregate_views(const ProbabilityVolume& axial, const ProbabilityVolume& coronal,
                             const ProbabilityVolume& sagittal_full,
                             const std::array<double, 3>& weights = kViewWeights);

// Full pipeline at the sample's native grid. `use` defaults to every
// modality present in the sample.
template <typename T>
Segmentation segment(HMVINN<T>& model, const MultiModalSample& s,
                     std::optional<Availability> use = std::nullopt);

struct SegmentationSidecar {
  Availability modalities;
  double voxel_size_mm = 1.0;
  Dims3 dims;
  std::string model_checksum;
};

void write_sidecar(const std::filesystem::path& path, const SegmentationSidecar& meta);
SegmentationSidecar read_sidecar(const std::filesystem::path& path);

// One f32 .mvol per class, named <stem>_p<k>.mvol.
std::vector<std::filesystem::path> write_probability_stack(const ProbabilityVolume& p,
                                                           const std::filesystem::path& stem);
ProbabilityVolume read_probability_stack(const std::filesystem::path& stem,
                                         std::size_t class_count);

}  // namespace hypkit
