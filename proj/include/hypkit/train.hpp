#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hypkit/labels.hpp"
#include "hypkit/model.hpp"
#include "hypkit/volume.hpp"

namespace hypkit {

struct TrainSchedule {
  std::size_t epochs = 100;
  std::size_t batch = 16;
  double lr_initial = 0.05;
  double lr_final = 0.005;
  std::size_t lr_drop_epoch = 70;
  double weight_decay = 1e-4;
  std::size_t modality_dropout_start = 10;
  // Slice stacks drawn per volume and epoch; 0 uses every slice.
  std::size_t slices_per_volume = 0;

  static TrainSchedule paper();
  static TrainSchedule desk();
  void validate() const;
  double lr_at(std::size_t epoch) const;
};

struct AugmentationConfig {
  double translation_mm = 15.0;  // uniform in [-t, t] per axis
  double rotation_deg = 10.0;    // uniform in [-r, r] per axis
  double scale_min = 0.85;
  double scale_max = 1.15;
  double bias_coeff = 0.5;  // coefficients uniform in [-c, c]
  int bias_order = 3;
  double internal_scale_min = 0.8;
  double internal_scale_max = 1.2;
  double affine_probability = 1.0;
  double bias_probability = 1.0;
  bool internal_scale = true;

  // The same ranges with translations shrunk to the small phantom field of
  // view.
  static AugmentationConfig desk();
  // No augmentation at all.
  static AugmentationConfig none();
  void validate() const;
};

using ModalityMask = Availability;

// w_c = median(freqs) / freq_c. ConfigError on a non-positive frequency or
// frequencies that do not sum to 1.
std::vector<double> median_frequency_weights(std::span<const double> freqs);

struct LossConfig {
  double ce_weight = 1.0;
  double dice_weight = 1.0;
  double dice_smooth = 1e-6;
};

// Class-weighted cross-entropy (normalized by the summed voxel weights) plus
// soft Dice loss, 1 - mean Dice over the classes present in `target`.
// `target` holds N*H*W labels in NHW order.
template <typename T>
Tensor<T> combined_loss(const Tensor<T>& logits, std::span<const std::uint16_t> target,
                        std::span<const double> class_weights,
                        const LossConfig& cfg = {});

// Both modalities before `dropout_start`, afterwards uniform over
// {both, T1 only, T2 only}.
ModalityMask sample_modality_mask(std::size_t epoch, std::size_t dropout_start,
                                  std::mt19937_64& rng);

struct AffineParams {
  std::array<double, 3> translation_mm{};
  std::array<double, 3> rotation_deg{};
  double scale = 1.0;

  bool is_identity() const;
};

AffineParams draw_affine(std::mt19937_64& rng, const AugmentationConfig& cfg);

// Rotation about the volume centre, isotropic scaling and translation.
// Intensities are resampled trilinearly, labels by nearest neighbour; the
// outside of the volume reads as zero.
MultiModalSample apply_affine(const MultiModalSample& s, const AffineParams& p);
MultiModalSample augment_affine(const MultiModalSample& s, std::mt19937_64& rng,
                                const AugmentationConfig& cfg);

// Number of monomials x^i y^j z^k with i + j + k <= order.
std::size_t bias_coefficient_count(int order);
// exp(P(x, y, z)) over coordinates normalized to [-1, 1] per axis.
std::vector<float> bias_field(const Dims3& dims, std::span<const double> coefficients,
                              int order);
Volume3D apply_bias_field(const Volume3D& v, std::span<const double> coefficients,
                          int order);
Volume3D augment_bias_field(const Volume3D& v, std::mt19937_64& rng,
                            const AugmentationConfig& cfg);

double draw_internal_scale(std::mt19937_64& rng, const AugmentationConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

// p <- p - lr*wd*p - lr*m_hat/(sqrt(v_hat) + eps). Parameters without a
// gradient are treated as having a zero gradient.
template <typename T>
void adamw_step(std::span<Tensor<T>> params, AdamWState& state, double lr, double wd,
                const AdamWConfig& cfg = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double w_t1 = 0.0;  // global weight, or mean |w| per channel
  double w_t2 = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  void write_csv(const std::filesystem::path& path) const;
};

struct TrainOptions {
  TrainSchedule schedule = TrainSchedule::desk();
  AugmentationConfig augmentation = AugmentationConfig::desk();
  LossConfig loss;
  std::uint64_t seed = 0;
  bool modality_dropout = true;
  std::function<void(Plane, const EpochRecord&)> on_epoch;
};

// Labels of `gt` in the label space of `plane` (lateral pairs unified for
// the sagittal view).
LabelMap3D plane_labels(const LabelMap3D& gt, Plane plane, const LabelScheme& scheme);

// Median-frequency class weights over a training set in the label space of
// `plane`; classes that never occur get weight 0.
std::vector<double> dataset_class_weights(const std::vector<MultiModalSample>& data,
                                          Plane plane, const LabelScheme& scheme);

// Trains one plane network in place. NumericalError on a non-finite loss.
template <typename T>
TrainHistory train_plane(PlaneNet<T>& net, const std::vector<MultiModalSample>& data,
                         const LabelScheme& scheme, const TrainOptions& opt);

// Trains the three plane networks one after another; history per plane.
template <typename T>
std::array<TrainHistory, 3> train_model(HMVINN<T>& model,
                                        const std::vector<MultiModalSample>& data,
                                        const TrainOptions& opt);

// Training configuration file (JSON). Keys: preset, seed, fusion,
// transition, modality_dropout, schedule{...}, augmentation{...}, loss{...}.
// Preset values are applied first, explicit keys override them.
struct TrainConfig {
  std::string preset = "desk";
  TrainOptions options;
  FusionMode fusion = FusionMode::global;
  ScaleTransition transition = ScaleTransition::resolution_normalization;

  // Network configuration of the preset with fusion and transition applied.
  PlaneNetConfig network(std::size_t class_count) const;
};

TrainConfig train_config_from_json(const std::string& json);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string train_config_to_json(const TrainConfig& cfg);

}  // namespace hypkit
