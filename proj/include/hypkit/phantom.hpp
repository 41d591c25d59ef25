#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hypkit/volume.hpp"

namespace hypkit {

// One ellipsoid of a phantom. Shapes are painted in order, so later shapes
// overwrite earlier ones; label 0 shapes are unlabeled tissue that still
// carries intensity.
struct PhantomShape {
  std::string name;
  std::array<double, 3> center_mm{};
  std::array<double, 3> radii_mm{};
  std::uint16_t label = 0;
  float t1 = 0.0f;
  float t2 = 0.0f;
  int mirror_of = -1;  // copy of another shape reflected across the x mid-plane
  int nested_in = -1;  // placed relative to another shape and scaled with it
};

struct PhantomSpec {
  Dims3 dims{48, 48, 48};
  double voxel_size_mm = 0.8;
  std::size_t class_count = 4;
  std::vector<PhantomShape> shapes;
  float background_t1 = 0.0f;
  float background_t2 = 0.0f;
  double noise_sigma = 0.0;
  double center_jitter_mm = 0.0;  // uniform per axis for top-level shapes
  double radius_jitter = 0.0;     // relative, uniform isotropic factor

  // Throws SpecError on invalid settings.
  void validate() const;
  double extent_mm(std::size_t axis) const { return dims[axis] * voxel_size_mm; }

  // Four-class desk phantom: unlabeled tissue ellipsoid, a lateral pair
  // (classes 1/2) and a midline core (class 3) that is visible only in T2.
  static PhantomSpec desk(double voxel_size_mm = 0.8, std::size_t extent = 48);
  // Two classes: a centred sphere of `radius_voxels` in an empty volume.
  static PhantomSpec sphere(std::size_t extent, double voxel_size_mm,
                            double radius_voxels);
};

// Shapes after the per-seed jitter has been applied.
std::vector<PhantomShape> realize_geometry(const PhantomSpec& spec,
                                           std::uint64_t seed);

// Labels whose T1 contrast equals that of their enclosing shape while the T2
// contrast differs.
std::vector<std::uint16_t> t2_only_classes(const PhantomSpec& spec);

MultiModalSample generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

// Generates from already realized shapes (no jitter is applied).
MultiModalSample render_phantom(const PhantomSpec& spec,
                                const std::vector<PhantomShape>& shapes,
                                std::uint64_t noise_seed);

// Fraction of each voxel covered by each class, estimated with
// `supersample`^3 sub-voxel samples.
ProbabilityVolume phantom_occupancy(const PhantomSpec& spec,
                                    const std::vector<PhantomShape>& shapes,
                                    std::size_t supersample);

struct CohortRecord {
  std::string id;
  double age = 0.0;
  int sex = 0;
  double etiv = 0.0;  // synthetic head-size covariate, mm^3
  std::uint64_t seed = 0;
};

// Linear volume model for one target structure:
// V = base + beta_age*(age - age_center) + beta_sex*sex
//       + beta_etiv*(etiv - etiv_mean) + noise.
struct EffectSpec {
  double beta_age = 0.0;   // mm^3 per year
  double beta_sex = 0.0;   // mm^3
  double beta_etiv = 0.0;  // mm^3 per mm^3 of eTIV
  double noise_sd = 0.0;   // mm^3
  std::uint16_t target_label = 1;
  double base_volume_mm3 = 0.0;  // 0: analytic volume of the template shape
  double age_min = 20.0;
  double age_max = 80.0;
  double etiv_mean = 1.5e6;
  double etiv_sd = 1.5e5;
};

struct CohortSubject {
  CohortRecord record;
  double true_volume_mm3 = 0.0;
  MultiModalSample sample;
};

// Covariate table only; identical to the records of generate_cohort.
std::vector<CohortRecord> generate_covariates(std::size_t n, const EffectSpec& effect,
                                              std::uint64_t seed);

std::vector<CohortSubject> generate_cohort(std::size_t n, const EffectSpec& effect,
                                           const PhantomSpec& base,
                                           std::uint64_t seed);

double ellipsoid_volume(const std::array<double, 3>& radii_mm);

// Deterministic stream splitting for per-sample seeding.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace hypkit
