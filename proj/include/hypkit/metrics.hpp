#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hypkit/labels.hpp"
#include "hypkit/volume.hpp"

namespace hypkit {

struct BinaryMask {
  Dims3 dims;
  std::vector<std::uint8_t> bits;

  static BinaryMask create(Dims3 dims);
  std::size_t count() const;
};

BinaryMask mask_of(const LabelMap3D& labels, std::uint16_t label);

// 2|M & P| / (|M| + |P|); 1 when both are empty.
double dice(const BinaryMask& m, const BinaryMask& p);

// 1 - ||M| - |P|| / (|M| + |P|); 1 when both are empty.
double volume_similarity(const BinaryMask& m, const BinaryMask& p);

// Boundary voxels of `mask`: members with a 6-neighbour outside the mask or
// outside the volume.
BinaryMask boundary(const BinaryMask& mask);

// Exact squared Euclidean distance (voxel units) from every voxel to the
// nearest member of `mask`. Entries are -1 when the mask is empty.
std::vector<std::int64_t> squared_distance_transform(const BinaryMask& mask);

// Distances in mm from each boundary voxel of `from` to the nearest voxel of
// `to`, in voxel order.
std::vector<double> directed_boundary_distances(const BinaryMask& from, const BinaryMask& to,
                                                double voxel_size_mm);

// Nearest-rank percentile: sorted[ceil(q * n) - 1].
double nearest_rank_percentile(std::vector<double> values, double q);

// Larger of the two directed 95th-percentile boundary distances, in mm.
// UndefinedMetricError when either mask is empty.
double hd95(const BinaryMask& m, const BinaryMask& p, double voxel_size_mm);

enum class RegionPooling { mean_of_structures, pooled_voxels };

struct MetricRow {
  std::string name;
  std::string region;
  bool applicable = true;  // false when the structure is absent from both maps
  std::optional<double> dice;
  std::optional<double> vs;
  std::optional<double> hd95_mm;
};

struct MetricReport {
  std::vector<MetricRow> structures;
  std::vector<MetricRow> regions;
  MetricRow global;

  // structure,region,dice,vs,hd95_mm with NA for missing values.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Per-structure rows, one row per region and a global row.
MetricReport evaluate_report(const LabelMap3D& pred, const LabelMap3D& gt,
                             const LabelScheme& scheme,
                             RegionPooling pooling = RegionPooling::mean_of_structures);

}  // namespace hypkit
