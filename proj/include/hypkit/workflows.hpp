#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "hypkit/infer.hpp"
#include "hypkit/metrics.hpp"
#include "hypkit/train.hpp"

namespace hypkit {

struct EvaluationOptions {
  std::optional<Availability> use;  // default: every modality of each sample
  // Resample the inputs to this voxel size, segment, and upsample the
  // probabilities back to the reference grid before taking hard labels.
  std::optional<double> resample_mm;
  RegionPooling pooling = RegionPooling::mean_of_structures;
};

struct DatasetScores {
  double dice = 0;
  double vs = 0;
  double hd95_mm = 0;       // mean over samples where it is defined
  std::size_t samples = 0;
  std::size_t hd95_samples = 0;
  std::vector<MetricReport> reports;
};

template <typename T>
Segmentation segment_with(HMVINN<T>& model, const MultiModalSample& s,
                          const EvaluationOptions& opt);

// Segments every sample and averages the global rows of their reports.
template <typename T>
DatasetScores evaluate_model(HMVINN<T>& model, const std::vector<MultiModalSample>& data,
                             const EvaluationOptions& opt = {});

// Repeat scan: every modality voxel is multiplied by 1 + cov * N(0, 1).
MultiModalSample simulate_rescan(const MultiModalSample& s, double cov, std::uint64_t seed);

struct AblationRow {
  FusionMode fusion = FusionMode::global;
  DatasetScores scores;
};

// Trains one model per fusion mode from the same seed and configuration and
// evaluates both on `test`.
std::vector<AblationRow> ablate_fusion(
    const std::vector<MultiModalSample>& train, const std::vector<MultiModalSample>& test,
    const LabelScheme& scheme, const TrainConfig& cfg,
    const std::function<void(FusionMode, Plane, const EpochRecord&)>& on_epoch = {});

// Columns fusion,dice,vs,hd95_mm.
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

}  // namespace hypkit
