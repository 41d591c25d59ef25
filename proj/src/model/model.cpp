#include "hypkit/model.hpp"

#include <cmath>
#include <string>

#include "hypkit/errors.hpp"
#include "hypkit/phantom.hpp"

namespace hypkit {

namespace {

template <typename T>
Tensor<T> kaiming(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  // He initialization for a PReLU slope of 0.25.
  const double stddev = std::sqrt(2.0 / ((1.0 + 0.0625) * static_cast<double>(fan_in)));
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>::from_data(std::move(shape), std::move(data), true);
}

template <typename T>
void collect_cdb(const std::string& prefix, CompetitiveDenseBlock<T>& b,
                 std::vector<ParamRef<T>>& out) {
  if (b.config().variant == CDBVariant::input_variant) {
    out.push_back({prefix + ".input_bn.gamma", b.input_bn.gamma});
    out.push_back({prefix + ".input_bn.beta", b.input_bn.beta});
  }
  for (std::size_t i = 0; i < CompetitiveDenseBlock<T>::kStages; ++i) {
    const std::string s = prefix + ".stage" + std::to_string(i);
    if (b.slope[i].defined()) out.push_back({s + ".prelu", b.slope[i]});
    out.push_back({s + ".conv.weight", b.weight[i]});
    out.push_back({s + ".conv.bias", b.bias[i]});
    out.push_back({s + ".bn.gamma", b.bn[i].gamma});
    out.push_back({s + ".bn.beta", b.bn[i].beta});
  }
}

template <typename T>
void collect_cdb_bn(const std::string& prefix, CompetitiveDenseBlock<T>& b,
                    std::vector<BatchNormRef<T>>& out) {
  if (b.config().variant == CDBVariant::input_variant)
    out.push_back({prefix + ".input_bn", &b.input_bn});
  for (std::size_t i = 0; i < CompetitiveDenseBlock<T>::kStages; ++i)
    out.push_back({prefix + ".stage" + std::to_string(i) + ".bn", &b.bn[i]});
}

template <typename T>
void collect_conv(const std::string& prefix, Conv1x1<T>& c,
                  std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", c.weight});
  out.push_back({prefix + ".bias", c.bias});
}

}  // namespace

// ------------------------------------------------------------------ fusion

const char* to_string(FusionMode mode) noexcept {
  return mode == FusionMode::global ? "global" : "per_channel";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "global") return FusionMode::global;
  if (s == "per_channel" || s == "per-channel") return FusionMode::per_channel;
  throw ConfigError("unknown fusion mode '" + s + "'");
}

template <typename T>
FusionWeights<T> FusionWeights<T>::create(FusionMode mode, std::size_t channels) {
  if (channels == 0) throw ConfigError("fusion needs at least one channel");
  const std::size_t n = mode == FusionMode::global ? 1 : channels;
  FusionWeights w;
  w.mode = mode;
  w.w_t1 = Tensor<T>::full({n}, T(0.5), true);
  w.w_t2 = Tensor<T>::full({n}, T(0.5), true);
  return w;
}

template <typename T>
std::pair<std::vector<double>, std::vector<double>> FusionWeights<T>::effective(
    Availability use) const {
  if (!use.any()) throw UsageError("fusion needs at least one modality");
  std::vector<double> c1(size()), c2(size());
  for (std::size_t k = 0; k < size(); ++k) {
    const double a = use.t1 ? std::abs(static_cast<double>(w_t1.data()[k])) : 0.0;
    const double b = use.t2 ? std::abs(static_cast<double>(w_t2.data()[k])) : 0.0;
    if (use.t1 && !use.t2) {
      c1[k] = 1.0;
      continue;
    }
    if (use.t2 && !use.t1) {
      c2[k] = 1.0;
      continue;
    }
    if (a + b == 0.0) throw DegenerateError("both fusion weights are zero");
    c1[k] = a / (a + b);
    c2[k] = b / (a + b);
  }
  return {c1, c2};
}

template <typename T>
Tensor<T> fuse_modalities(const Tensor<T>& f_t1, const Tensor<T>& f_t2,
                          const FusionWeights<T>& w) {
  if (!f_t1.defined() && !f_t2.defined())
    throw UsageError("fusion needs at least one modality");
  if (f_t1.defined() && f_t2.defined() && f_t1.shape() != f_t2.shape())
    throw ShapeError("fusion: modality feature shapes differ: " +
                     shape_str(f_t1.shape()) + " vs " + shape_str(f_t2.shape()));
  const Tensor<T>& ref = f_t1.defined() ? f_t1 : f_t2;
  if (ref.rank() != 4) throw ShapeError("fusion expects NCHW features");
  std::vector<FusionRoute> routes(ref.dim(0));
  for (std::size_t i = 0; i < routes.size(); ++i) {
    if (f_t1.defined()) routes[i].t1_row = static_cast<int>(i);
    if (f_t2.defined()) routes[i].t2_row = static_cast<int>(i);
  }
  return fuse_modalities_routed(f_t1, f_t2, w, routes);
}

template <typename T>
Tensor<T> fuse_modalities_routed(const Tensor<T>& f_t1, const Tensor<T>& f_t2,
                                 const FusionWeights<T>& w,
                                 const std::vector<FusionRoute>& routes) {
  if (!f_t1.defined() && !f_t2.defined())
    throw UsageError("fusion needs at least one modality");
  for (const auto* f : {&f_t1, &f_t2})
    if (f->defined() && f->rank() != 4) throw ShapeError("fusion expects NCHW features");
  const Tensor<T>& ref = f_t1.defined() ? f_t1 : f_t2;
  const std::size_t c = ref.dim(1), h = ref.dim(2), wd = ref.dim(3);
  if (f_t1.defined() && f_t2.defined() &&
      (f_t2.dim(1) != c || f_t2.dim(2) != h || f_t2.dim(3) != wd))
    throw ShapeError("fusion: modality feature shapes differ: " +
                     shape_str(f_t1.shape()) + " vs " + shape_str(f_t2.shape()));
  if (w.mode == FusionMode::per_channel && w.size() != c)
    throw ShapeError("per-channel fusion weights have " + std::to_string(w.size()) +
                     " entries for " + std::to_string(c) + " channels");
  if (routes.empty()) throw ShapeError("fusion: no output samples");
  for (const auto& r : routes) {
    if (r.t1_row < 0 && r.t2_row < 0)
      throw UsageError("fusion route selects no modality");
    if (r.t1_row >= 0 && (!f_t1.defined() || static_cast<std::size_t>(r.t1_row) >= f_t1.dim(0)))
      throw ShapeError("fusion route points past the T1 feature batch");
    if (r.t2_row >= 0 && (!f_t2.defined() || static_cast<std::size_t>(r.t2_row) >= f_t2.dim(0)))
      throw ShapeError("fusion route points past the T2 feature batch");
  }

  const std::size_t hw = h * wd, sample = c * hw, n = routes.size();
  const std::size_t nw = w.size();
  std::vector<T> c1(nw), c2(nw);
  bool any_both = false;
  for (const auto& r : routes) any_both |= (r.t1_row >= 0 && r.t2_row >= 0);
  if (any_both) {
    for (std::size_t k = 0; k < nw; ++k) {
      const T a = std::abs(w.w_t1.data()[k]);
      const T b = std::abs(w.w_t2.data()[k]);
      if (a + b == T(0)) throw DegenerateError("both fusion weights are zero");
      c1[k] = a / (a + b);
      c2[k] = b / (a + b);
    }
  }

  std::vector<T> out(n * sample);
  const T* d1 = f_t1.defined() ? f_t1.data().data() : nullptr;
  const T* d2 = f_t2.defined() ? f_t2.data().data() : nullptr;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = routes[i];
    T* o = out.data() + i * sample;
    if (r.t2_row < 0) {
      std::copy_n(d1 + r.t1_row * sample, sample, o);
      continue;
    }
    if (r.t1_row < 0) {
      std::copy_n(d2 + r.t2_row * sample, sample, o);
      continue;
    }
    const T* a = d1 + r.t1_row * sample;
    const T* b = d2 + r.t2_row * sample;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t k = nw == 1 ? 0 : ch;
      const T ca = c1[k], cb = c2[k];
      const std::size_t off = ch * hw;
      if (cb == T(0)) {
        for (std::size_t p = 0; p < hw; ++p) o[off + p] = ca * a[off + p];
      } else if (ca == T(0)) {
        for (std::size_t p = 0; p < hw; ++p) o[off + p] = cb * b[off + p];
      } else {
        for (std::size_t p = 0; p < hw; ++p)
          o[off + p] = ca * a[off + p] + cb * b[off + p];
      }
    }
  }

  std::vector<Tensor<T>> parents{w.w_t1, w.w_t2};
  const int i1 = f_t1.defined() ? static_cast<int>(parents.size()) : -1;
  if (f_t1.defined()) parents.push_back(f_t1);
  const int i2 = f_t2.defined() ? static_cast<int>(parents.size()) : -1;
  if (f_t2.defined()) parents.push_back(f_t2);

  return autograd::make_result<T>(
      {n, c, h, wd}, std::move(out), std::move(parents),
      [routes, c1, c2, i1, i2, c, hw, sample, nw](TensorNode<T>& self) {
        auto grad = [&](int idx) -> T* {
          if (idx < 0) return nullptr;
          auto& p = *self.parents[idx];
          return p.requires_grad ? p.grad_buffer().data() : nullptr;
        };
        T* gw1 = grad(0);
        T* gw2 = grad(1);
        T* g1 = grad(i1);
        T* g2 = grad(i2);
        const T* w1 = self.parents[0]->data.data();
        const T* w2 = self.parents[1]->data.data();
        const T* d1 = i1 >= 0 ? self.parents[i1]->data.data() : nullptr;
        const T* d2 = i2 >= 0 ? self.parents[i2]->data.data() : nullptr;
        const T* go = self.grad.data();
        for (std::size_t i = 0; i < routes.size(); ++i) {
          const auto& r = routes[i];
          const T* gi = go + i * sample;
          if (r.t2_row < 0) {
            if (g1)
              for (std::size_t p = 0; p < sample; ++p) g1[r.t1_row * sample + p] += gi[p];
            continue;
          }
          if (r.t1_row < 0) {
            if (g2)
              for (std::size_t p = 0; p < sample; ++p) g2[r.t2_row * sample + p] += gi[p];
            continue;
          }
          const T* a = d1 + r.t1_row * sample;
          const T* b = d2 + r.t2_row * sample;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t k = nw == 1 ? 0 : ch;
            const std::size_t off = ch * hw;
            if (g1)
              for (std::size_t p = 0; p < hw; ++p) g1[r.t1_row * sample + off + p] += c1[k] * gi[off + p];
            if (g2)
              for (std::size_t p = 0; p < hw; ++p) g2[r.t2_row * sample + off + p] += c2[k] * gi[off + p];
            if (gw1 || gw2) {
              const double aw = std::abs(static_cast<double>(w1[k]));
              const double bw = std::abs(static_cast<double>(w2[k]));
              const double s2 = (aw + bw) * (aw + bw);
              double acc = 0;  // sum g * (F1 - F2)
              for (std::size_t p = 0; p < hw; ++p)
                acc += static_cast<double>(gi[off + p]) *
                       (static_cast<double>(a[off + p]) - static_cast<double>(b[off + p]));
              const auto sgn = [](T v) { return v > T(0) ? 1.0 : (v < T(0) ? -1.0 : 0.0); };
              if (gw1) gw1[k] += static_cast<T>(sgn(w1[k]) * bw * acc / s2);
              if (gw2) gw2[k] += static_cast<T>(-sgn(w2[k]) * aw * acc / s2);
            }
          }
        }
      },
      "fuse_modalities");
}

// ------------------------------------------------------------------ blocks

template <typename T>
CompetitiveDenseBlock<T>::CompetitiveDenseBlock(CDBConfig cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  if (cfg.channels == 0) throw ConfigError("dense block needs at least one channel");
  const std::size_t ch = cfg.channels;
  if (cfg.variant == CDBVariant::input_variant) input_bn = BatchNormParams<T>::create(ch);
  for (std::size_t i = 0; i < kStages; ++i) {
    if (!(i == 0 && cfg.variant == CDBVariant::input_variant))
      slope[i] = Tensor<T>::full({1}, T(0.25), true);
    weight[i] = kaiming<T>({ch, ch, 3, 3}, ch * 9, rng);
    bias[i] = Tensor<T>::zeros({ch}, true);
    bn[i] = BatchNormParams<T>::create(ch);
  }
}

template <typename T>
Tensor<T> CompetitiveDenseBlock<T>::forward(const Tensor<T>& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != cfg_.channels)
    throw ShapeError("dense block expects " + std::to_string(cfg_.channels) +
                     " channels, got " + shape_str(x.shape()));
  Tensor<T> running = x;
  for (std::size_t i = 0; i < kStages; ++i) {
    Tensor<T> a = (i == 0 && cfg_.variant == CDBVariant::input_variant)
                      ? batchnorm2d(running, input_bn, training)
                      : prelu(running, slope[i]);
    Tensor<T> y = batchnorm2d(conv2d(a, weight[i], bias[i]), bn[i], training);
    running = maximum(running, y);
  }
  return running;
}

template <typename T>
Conv1x1<T>::Conv1x1(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(kaiming<T>({out, in, 1, 1}, in, rng)), bias(Tensor<T>::zeros({out}, true)) {}

// ------------------------------------------------------------------ resolution

template <typename T>
Tensor<T> resolution_normalize(const Tensor<T>& f, double native_voxel_mm,
                               double internal_voxel_mm, double jitter) {
  if (!(native_voxel_mm > 0) || !(internal_voxel_mm > 0) || !(jitter > 0))
    throw ShapeError("resolution normalization needs positive voxel sizes and jitter");
  return interp2d(f, native_voxel_mm / internal_voxel_mm * jitter);
}

template <typename T>
Tensor<T> resolution_denormalize(const Tensor<T>& f, const NormalizedExtent& native) {
  return interp2d_to(f, native.native_h, native.native_w);
}

// ------------------------------------------------------------------ slices

const char* to_string(Plane plane) noexcept {
  switch (plane) {
    case Plane::axial: return "axial";
    case Plane::coronal: return "coronal";
    case Plane::sagittal: return "sagittal";
  }
  return "axial";
}

Plane plane_from_string(const std::string& s) {
  if (s == "axial") return Plane::axial;
  if (s == "coronal") return Plane::coronal;
  if (s == "sagittal") return Plane::sagittal;
  throw ConfigError("unknown plane '" + s + "'");
}

std::size_t slice_count(const Dims3& dims, Plane plane) {
  switch (plane) {
    case Plane::axial: return dims.z;
    case Plane::coronal: return dims.y;
    case Plane::sagittal: return dims.x;
  }
  return 0;
}

std::pair<std::size_t, std::size_t> slice_extent(const Dims3& dims, Plane plane) {
  switch (plane) {
    case Plane::axial: return {dims.y, dims.x};
    case Plane::coronal: return {dims.z, dims.x};
    case Plane::sagittal: return {dims.z, dims.y};
  }
  return {0, 0};
}

std::size_t voxel_index(const Dims3& dims, Plane plane, std::size_t slice,
                        std::size_t row, std::size_t col) {
  switch (plane) {
    case Plane::axial: return dims.index(col, row, slice);
    case Plane::coronal: return dims.index(col, slice, row);
    case Plane::sagittal: return dims.index(slice, col, row);
  }
  return 0;
}

template <typename T>
void extract_slice_stack(const Volume3D& v, Plane plane, const SliceStack& stack,
                         T* out) {
  if (stack.thickness == 0 || stack.thickness % 2 == 0)
    throw ConfigError("slice thickness must be odd");
  const std::size_t n = slice_count(v.dims, plane);
  if (stack.center >= n)
    throw ShapeError("slice " + std::to_string(stack.center) + " outside volume");
  const auto [h, w] = slice_extent(v.dims, plane);
  const long half = static_cast<long>(stack.thickness / 2);
  for (long d = -half; d <= half; ++d) {
    T* o = out + static_cast<std::size_t>(d + half) * h * w;
    const long s = static_cast<long>(stack.center) + d;
    if (s < 0 || s >= static_cast<long>(n)) {
      std::fill_n(o, h * w, T(0));
      continue;
    }
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        o[r * w + c] = static_cast<T>(
            v.data[voxel_index(v.dims, plane, static_cast<std::size_t>(s), r, c)]);
  }
}

std::vector<std::uint16_t> extract_label_slice(const LabelMap3D& m, Plane plane,
                                               std::size_t slice) {
  if (slice >= slice_count(m.dims, plane))
    throw ShapeError("slice " + std::to_string(slice) + " outside volume");
  const auto [h, w] = slice_extent(m.dims, plane);
  std::vector<std::uint16_t> out(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out[r * w + c] = m.labels[voxel_index(m.dims, plane, slice, r, c)];
  return out;
}

// ------------------------------------------------------------------ network

PlaneNetConfig PlaneNetConfig::desk(Plane plane, std::size_t class_count) {
  PlaneNetConfig c;
  c.plane = plane;
  c.class_count = class_count;
  return c;
}

PlaneNetConfig PlaneNetConfig::paper(Plane plane, std::size_t class_count) {
  PlaneNetConfig c;
  c.plane = plane;
  c.class_count = class_count;
  c.first_width = 64;
  c.inner_width = 80;
  c.levels = 5;
  return c;
}

const char* to_string(ScaleTransition t) noexcept {
  return t == ScaleTransition::resolution_normalization ? "resolution_normalization"
                                                        : "fixed_pooling";
}

ScaleTransition scale_transition_from_string(const std::string& s) {
  if (s == "resolution_normalization") return ScaleTransition::resolution_normalization;
  if (s == "fixed_pooling") return ScaleTransition::fixed_pooling;
  throw ConfigError("unknown scale transition '" + s + "'");
}

void PlaneNetConfig::validate() const {
  if (class_count < 2) throw ConfigError("class_count must be at least 2");
  if (slice_thickness == 0 || slice_thickness % 2 == 0)
    throw ConfigError("slice_thickness must be odd");
  if (first_width == 0 || inner_width == 0) throw ConfigError("widths must be positive");
  if (levels < 2) throw ConfigError("levels must be at least 2");
  if (!(internal_voxel_mm > 0)) throw ConfigError("internal voxel size must be positive");
}

template <typename T>
PlaneNet<T>::PlaneNet(PlaneNetConfig cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      rng_(seed),
      t1_adapter_(cfg.slice_thickness, cfg.first_width, rng_),
      t2_adapter_(cfg.slice_thickness, cfg.first_width, rng_),
      t1_block_({CDBVariant::input_variant, cfg.first_width}, rng_),
      t2_block_({CDBVariant::input_variant, cfg.first_width}, rng_),
      fusion_(FusionWeights<T>::create(cfg.fusion, cfg.first_width)),
      down_adapter_(cfg.first_width, cfg.inner_width, rng_),
      bottleneck_({CDBVariant::standard, cfg.inner_width}, rng_),
      up_adapter_(cfg.inner_width, cfg.first_width, rng_),
      native_decoder_({CDBVariant::standard, cfg.first_width}, rng_),
      classifier_(cfg.first_width, cfg.class_count, rng_) {
  for (std::size_t l = 0; l + 1 < cfg_.levels; ++l) {
    encoders_.emplace_back(
        CDBConfig{l == 0 ? CDBVariant::input_variant : CDBVariant::standard,
                  cfg_.inner_width},
        rng_);
    decoders_.emplace_back(CDBConfig{CDBVariant::standard, cfg_.inner_width}, rng_);
  }
}

template <typename T>
Tensor<T> PlaneNet<T>::forward(const PlaneInput<T>& in, const ForwardOptions& opt) {
  for (const auto* t : {&in.t1, &in.t2})
    if (t->defined() && (t->rank() != 4 || t->dim(1) != cfg_.slice_thickness))
      throw ShapeError("plane input must be [N, " + std::to_string(cfg_.slice_thickness) +
                       ", H, W], got " + shape_str(t->shape()));
  Tensor<T> f1, f2;
  if (in.t1.defined()) f1 = t1_block_.forward(t1_adapter_.forward(in.t1), opt.training);
  if (in.t2.defined()) f2 = t2_block_.forward(t2_adapter_.forward(in.t2), opt.training);
  Tensor<T> fused = fuse_modalities_routed(f1, f2, fusion_, in.routes);

  const NormalizedExtent native{fused.dim(2), fused.dim(3)};
  Tensor<T> z;
  PoolIndices first_pool;
  if (cfg_.transition == ScaleTransition::resolution_normalization) {
    const double jitter = opt.training ? opt.scale_jitter : 1.0;
    z = resolution_normalize(fused, in.native_voxel_mm, cfg_.internal_voxel_mm, jitter);
  } else {
    auto pooled = maxpool2d(fused);
    z = pooled.values;
    first_pool = pooled.indices;
  }
  z = down_adapter_.forward(z);

  std::vector<Tensor<T>> skips;
  std::vector<PoolIndices> pools;
  for (auto& enc : encoders_) {
    z = enc.forward(z, opt.training);
    skips.push_back(z);
    auto pooled = maxpool2d(z);
    pools.push_back(pooled.indices);
    z = pooled.values;
  }
  z = bottleneck_.forward(z, opt.training);
  for (std::size_t l = decoders_.size(); l-- > 0;) {
    z = maximum(maxunpool2d(z, pools[l]), skips[l]);
    z = decoders_[l].forward(z, opt.training);
  }
  z = up_adapter_.forward(z);
  if (cfg_.transition == ScaleTransition::resolution_normalization)
    z = resolution_denormalize(z, native);
  else
    z = maxunpool2d(z, first_pool);
  z = maximum(z, fused);
  z = native_decoder_.forward(z, opt.training);
  return classifier_.forward(z);
}

template <typename T>
std::vector<ParamRef<T>> PlaneNet<T>::parameters() {
  std::vector<ParamRef<T>> out;
  collect_conv("t1_adapter", t1_adapter_, out);
  collect_conv("t2_adapter", t2_adapter_, out);
  collect_cdb("t1_block", t1_block_, out);
  collect_cdb("t2_block", t2_block_, out);
  out.push_back({"fusion.w_t1", fusion_.w_t1});
  out.push_back({"fusion.w_t2", fusion_.w_t2});
  collect_conv("down_adapter", down_adapter_, out);
  for (std::size_t l = 0; l < encoders_.size(); ++l)
    collect_cdb("encoder" + std::to_string(l), encoders_[l], out);
  collect_cdb("bottleneck", bottleneck_, out);
  for (std::size_t l = 0; l < decoders_.size(); ++l)
    collect_cdb("decoder" + std::to_string(l), decoders_[l], out);
  collect_conv("up_adapter", up_adapter_, out);
  collect_cdb("native_decoder", native_decoder_, out);
  collect_conv("classifier", classifier_, out);
  return out;
}

template <typename T>
std::vector<BatchNormRef<T>> PlaneNet<T>::batchnorms() {
  std::vector<BatchNormRef<T>> out;
  collect_cdb_bn("t1_block", t1_block_, out);
  collect_cdb_bn("t2_block", t2_block_, out);
  for (std::size_t l = 0; l < encoders_.size(); ++l)
    collect_cdb_bn("encoder" + std::to_string(l), encoders_[l], out);
  collect_cdb_bn("bottleneck", bottleneck_, out);
  for (std::size_t l = 0; l < decoders_.size(); ++l)
    collect_cdb_bn("decoder" + std::to_string(l), decoders_[l], out);
  collect_cdb_bn("native_decoder", native_decoder_, out);
  return out;
}

template <typename T>
std::size_t PlaneNet<T>::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
void PlaneNet<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
void PlaneNet<T>::reset_running_stats() {
  for (auto& b : batchnorms()) b.params->reset_running_stats();
}

template <typename T>
PlaneInput<T> make_plane_input(const MultiModalSample& s, Plane plane,
                               std::size_t thickness, std::size_t first,
                               std::size_t count, Availability use) {
  if (!use.any()) throw UsageError("no modality selected");
  if ((use.t1 && !s.t1()) || (use.t2 && !s.t2()))
    throw UsageError("requested modality is not available in the sample");
  const std::size_t n = slice_count(s.dims(), plane);
  if (count == 0 || first + count > n) throw ShapeError("slice range outside volume");
  const auto [h, w] = slice_extent(s.dims(), plane);
  const std::size_t per = thickness * h * w;
  PlaneInput<T> in;
  in.native_voxel_mm = s.voxel_size_mm();
  auto build = [&](const Volume3D& v) {
    std::vector<T> data(count * per);
    for (std::size_t i = 0; i < count; ++i)
      extract_slice_stack<T>(v, plane, {first + i, thickness}, data.data() + i * per);
    return Tensor<T>::from_data({count, thickness, h, w}, std::move(data));
  };
  if (use.t1) in.t1 = build(*s.t1());
  if (use.t2) in.t2 = build(*s.t2());
  in.routes.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (use.t1) in.routes[i].t1_row = static_cast<int>(i);
    if (use.t2) in.routes[i].t2_row = static_cast<int>(i);
  }
  return in;
}

template <typename T>
HMVINN<T>::HMVINN(LabelScheme scheme, const PlaneNetConfig& base, std::uint64_t seed)
    : scheme_(std::move(scheme)) {
  nets_.reserve(3);
  for (Plane p : {Plane::axial, Plane::coronal, Plane::sagittal}) {
    PlaneNetConfig c = base;
    c.plane = p;
    c.class_count = p == Plane::sagittal ? scheme_.sagittal_class_count()
                                         : scheme_.class_count();
    nets_.emplace_back(c, mix_seed(seed, static_cast<std::uint64_t>(p)));
  }
}

#define HYPKIT_INSTANTIATE_MODEL(T)                                               \
  template struct FusionWeights<T>;                                               \
  template Tensor<T> fuse_modalities(const Tensor<T>&, const Tensor<T>&,          \
                                     const FusionWeights<T>&);                    \
  template Tensor<T> fuse_modalities_routed(const Tensor<T>&, const Tensor<T>&,   \
                                            const FusionWeights<T>&,              \
                                            const std::vector<FusionRoute>&);     \
  template class CompetitiveDenseBlock<T>;                                        \
  template struct Conv1x1<T>;                                                     \
  template Tensor<T> resolution_normalize(const Tensor<T>&, double, double,       \
                                          double);                                \
  template Tensor<T> resolution_denormalize(const Tensor<T>&,                     \
                                            const NormalizedExtent&);             \
  template void extract_slice_stack(const Volume3D&, Plane, const SliceStack&,    \
                                    T*);                                          \
  template class PlaneNet<T>;                                                     \
  template PlaneInput<T> make_plane_input(const MultiModalSample&, Plane,         \
                                          std::size_t, std::size_t, std::size_t,  \
                                          Availability);                          \
  template class HMVINN<T>;

HYPKIT_INSTANTIATE_MODEL(float)
HYPKIT_INSTANTIATE_MODEL(double)

}  // namespace hypkit
