#pragma once

// Layer primitives on NCHW tensors. Every op records its backward pass when
// gradient recording is enabled.

#include <cstdint>
#include <memory>
#include <vector>

#include "hypkit/tensor.hpp"

namespace hypkit {

// Same-padded, stride-1 cross-correlation. `weight` is
// [out_channels, in_channels, k, k] with odd k; `bias` is [out_channels] or
// undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias);

// y = x for x > 0, slope * x otherwise. `slope` is [1] or [channels].
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope);

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;  // [channels]
  Tensor<T> beta;   // [channels]
  std::vector<T> running_mean;
  std::vector<T> running_var;
  bool running_initialized = false;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormParams create(std::size_t channels);
  std::size_t channels() const { return running_mean.size(); }
  // Resets running statistics to mean 0 / variance 1 and marks them usable.
  void reset_running_stats();
};

// Training mode normalizes with batch statistics and updates the running
// estimates (unbiased variance); eval mode uses the running estimates.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormParams<T>& params,
                      bool training);

struct PoolIndices {
  std::shared_ptr<const std::vector<std::uint32_t>> argmax;  // flat h*w index
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::size_t batch = 0;
  std::size_t channels = 0;
};

template <typename T>
struct PoolResult {
  Tensor<T> values;
  PoolIndices indices;
};

// 2x2 / stride 2 max pooling. Odd extents are padded to even; the padding
// never wins the max so every index addresses a real input position.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x);

// Scatters each pooled value back to its recorded position in a zero map of
// the original (unpadded) extent.
template <typename T>
Tensor<T> maxunpool2d(const Tensor<T>& y, const PoolIndices& indices);

// Bilinear resize without corner alignment. Output extents are
// floor(extent * scale);
// ShapeError when one of them would be zero.
template <typename T>
Tensor<T> interp2d(const Tensor<T>& x, double scale);

// Bilinear resize to explicit output extents.
template <typename T>
Tensor<T> interp2d_to(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

std::size_t scaled_extent(std::size_t extent, double scale);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
// Element-wise maximum; ties route the gradient to `a`.
template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

// Softmax over the channel axis of an NCHW tensor.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x);

}  // namespace hypkit
