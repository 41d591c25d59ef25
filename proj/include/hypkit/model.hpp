#pragma once

// Hetero-modal voxel-size-independent plane network.
//
// Per plane: modality-specific input blocks -> learnable normalized fusion
// -> resolution normalization to the internal grid -> competitive dense
// encoder/bottleneck/decoder with max-(un)pooling -> resolution
// denormalization -> native-resolution decoder block -> 1x1 classifier.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hypkit/labels.hpp"
#include "hypkit/ops.hpp"
#include "hypkit/volume.hpp"

namespace hypkit {

// ------------------------------------------------------------------ fusion

enum class FusionMode { global, per_channel };

const char* to_string(FusionMode mode) noexcept;
FusionMode fusion_mode_from_string(const std::string& s);

template <typename T>
struct FusionWeights {
  FusionMode mode = FusionMode::global;
  Tensor<T> w_t1;  // [1] (global) or [channels]
  Tensor<T> w_t2;

  // Both weights start at 0.5.
  static FusionWeights create(FusionMode mode, std::size_t channels);
  std::size_t size() const { return w_t1.numel(); }
  // |w1| / (|w1| + |w2|) and |w2| / (|w1| + |w2|) per entry, with an absent
  // modality's weight treated as exactly zero.
  std::pair<std::vector<double>, std::vector<double>> effective(Availability use) const;
};

// Where each fused output sample takes its features from: a row of the T1
// feature batch, a row of the T2 feature batch, or both. -1 marks absence.
struct FusionRoute {
  int t1_row = -1;
  int t2_row = -1;
};

// F = (|w1| F1 + |w2| F2) / (|w1| + |w2|). With one modality absent the
// present branch is passed through unchanged. Undefined tensors mark absent
// modalities; present maps must share their shape.
template <typename T>
Tensor<T> fuse_modalities(const Tensor<T>& f_t1, const Tensor<T>& f_t2,
                          const FusionWeights<T>& w);

template <typename T>
Tensor<T> fuse_modalities_routed(const Tensor<T>& f_t1, const Tensor<T>& f_t2,
                                 const FusionWeights<T>& w,
                                 const std::vector<FusionRoute>& routes);

// ------------------------------------------------------------------ blocks

enum class CDBVariant { standard, input_variant };

struct CDBConfig {
  CDBVariant variant = CDBVariant::standard;
  std::size_t channels = 0;
};

// Four PReLU -> Conv3x3 -> BN stages. After each stage the running feature
// map competes with the stage output by element-wise maximum. The input
// variant normalizes with BN instead of the first PReLU.
template <typename T>
class CompetitiveDenseBlock {
 public:
  static constexpr std::size_t kStages = 4;

  CompetitiveDenseBlock(CDBConfig cfg, std::mt19937_64& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training);

  const CDBConfig& config() const noexcept { return cfg_; }

  BatchNormParams<T> input_bn;
  std::array<Tensor<T>, kStages> slope;
  std::array<Tensor<T>, kStages> weight;
  std::array<Tensor<T>, kStages> bias;
  std::array<BatchNormParams<T>, kStages> bn;

 private:
  CDBConfig cfg_;
};

// 1x1 convolution with bias.
template <typename T>
struct Conv1x1 {
  Tensor<T> weight;
  Tensor<T> bias;

  Conv1x1(std::size_t in, std::size_t out, std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias); }
};

// ------------------------------------------------------------------ resolution

struct NormalizedExtent {
  std::size_t native_h = 0;
  std::size_t native_w = 0;
};

// Interpolates native-resolution features onto the internal grid with
// scale native/internal * jitter.
template <typename T>
Tensor<T> resolution_normalize(const Tensor<T>& f, double native_voxel_mm,
                               double internal_voxel_mm = 1.0, double jitter = 1.0);

// Restores the recorded native extent.
template <typename T>
Tensor<T> resolution_denormalize(const Tensor<T>& f, const NormalizedExtent& native);

// ------------------------------------------------------------------ slices

enum class Plane { axial = 0, coronal = 1, sagittal = 2 };

const char* to_string(Plane plane) noexcept;
Plane plane_from_string(const std::string& s);

// Axial slices fix z (rows y, cols x); coronal fix y (rows z, cols x);
// sagittal fix x (rows z, cols y). x is the left/right axis.
std::size_t slice_count(const Dims3& dims, Plane plane);
std::pair<std::size_t, std::size_t> slice_extent(const Dims3& dims, Plane plane);
std::size_t voxel_index(const Dims3& dims, Plane plane, std::size_t slice,
                        std::size_t row, std::size_t col);

struct SliceStack {
  std::size_t center = 0;
  std::size_t thickness = 7;  // odd
};

// Writes thickness x H x W values; neighbours outside the volume are zero.
template <typename T>
void extract_slice_stack(const Volume3D& v, Plane plane, const SliceStack& stack,
                         T* out);

std::vector<std::uint16_t> extract_label_slice(const LabelMap3D& m, Plane plane,
                                               std::size_t slice);

// ------------------------------------------------------------------ network

enum class ScaleTransition { resolution_normalization, fixed_pooling };

const char* to_string(ScaleTransition t) noexcept;
ScaleTransition scale_transition_from_string(const std::string& s);

struct PlaneNetConfig {
  Plane plane = Plane::axial;
  std::size_t class_count = 4;
  std::size_t slice_thickness = 7;
  std::size_t first_width = 16;
  std::size_t inner_width = 24;
  std::size_t levels = 3;  // encoder blocks including the modality level
  FusionMode fusion = FusionMode::global;
  double internal_voxel_mm = 1.0;
  ScaleTransition transition = ScaleTransition::resolution_normalization;
  // Volumes are rescaled with normalize_intensity before slicing.
  bool normalize_intensity = true;

  static PlaneNetConfig desk(Plane plane, std::size_t class_count);
  static PlaneNetConfig paper(Plane plane, std::size_t class_count);
  void validate() const;
};

template <typename T>
struct PlaneInput {
  Tensor<T> t1;  // [N1, thickness, H, W] or undefined
  Tensor<T> t2;  // [N2, thickness, H, W] or undefined
  std::vector<FusionRoute> routes;  // one per output sample
  double native_voxel_mm = 1.0;
};

struct ForwardOptions {
  bool training = false;
  double scale_jitter = 1.0;  // multiplies the normalization scale in training
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct BatchNormRef {
  std::string name;
  BatchNormParams<T>* params;
};

template <typename T>
class PlaneNet {
 public:
  PlaneNet(PlaneNetConfig cfg, std::uint64_t seed);

  // Per-class logits at the native slice extent.
  Tensor<T> forward(const PlaneInput<T>& in, const ForwardOptions& opt = {});

  const PlaneNetConfig& config() const noexcept { return cfg_; }
  FusionWeights<T>& fusion() noexcept { return fusion_; }
  const FusionWeights<T>& fusion() const noexcept { return fusion_; }

  std::vector<ParamRef<T>> parameters();
  std::vector<BatchNormRef<T>> batchnorms();
  std::size_t parameter_count();
  void zero_grad();
  void reset_running_stats();

 private:
  PlaneNetConfig cfg_;
  std::mt19937_64 rng_;
  Conv1x1<T> t1_adapter_;
  Conv1x1<T> t2_adapter_;
  CompetitiveDenseBlock<T> t1_block_;
  CompetitiveDenseBlock<T> t2_block_;
  FusionWeights<T> fusion_;
  Conv1x1<T> down_adapter_;
  std::vector<CompetitiveDenseBlock<T>> encoders_;
  CompetitiveDenseBlock<T> bottleneck_;
  std::vector<CompetitiveDenseBlock<T>> decoders_;
  Conv1x1<T> up_adapter_;
  CompetitiveDenseBlock<T> native_decoder_;
  Conv1x1<T> classifier_;
};

// Builds a PlaneInput for `count` slices starting at `first` from the
// modalities selected in `use`.
template <typename T>
PlaneInput<T> make_plane_input(const MultiModalSample& s, Plane plane,
                               std::size_t thickness, std::size_t first,
                               std::size_t count, Availability use);

inline constexpr std::array<double, 3> kViewWeights{0.4, 0.4, 0.2};

// Three plane networks and their view weights.
template <typename T>
class HMVINN {
 public:
  HMVINN(LabelScheme scheme, const PlaneNetConfig& base, std::uint64_t seed);

  PlaneNet<T>& plane(Plane p) { return nets_[static_cast<std::size_t>(p)]; }
  const PlaneNet<T>& plane(Plane p) const { return nets_[static_cast<std::size_t>(p)]; }
  const LabelScheme& scheme() const noexcept { return scheme_; }
  const std::array<double, 3>& view_weights() const noexcept { return weights_; }

 private:
  LabelScheme scheme_;
  std::vector<PlaneNet<T>> nets_;
  std::array<double, 3> weights_ = kViewWeights;
};

extern template class PlaneNet<float>;
extern template class PlaneNet<double>;
extern template class HMVINN<float>;
extern template class HMVINN<double>;

}  // namespace hypkit
