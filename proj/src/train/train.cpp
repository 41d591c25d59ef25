#include "hypkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "hypkit/errors.hpp"
#include "hypkit/phantom.hpp"

namespace hypkit {

// ------------------------------------------------------------------ config

TrainSchedule TrainSchedule::paper() { return TrainSchedule{}; }

TrainSchedule TrainSchedule::desk() {
  TrainSchedule s;
  s.epochs = 50;
  s.batch = 4;
  s.lr_initial = 0.01;
  s.lr_final = 0.001;
  s.lr_drop_epoch = 35;
  s.slices_per_volume = 10;
  return s;
}

void TrainSchedule::validate() const {
  if (epochs == 0) throw ConfigError("schedule: epochs must be positive");
  if (batch == 0) throw ConfigError("schedule: batch must be positive");
  if (!(lr_initial > 0) || !(lr_final > 0))
    throw ConfigError("schedule: learning rates must be positive");
  if (weight_decay < 0) throw ConfigError("schedule: weight decay must be non-negative");
  if (modality_dropout_start >= epochs)
    throw ConfigError("schedule: modality dropout must start before the last epoch");
}

double TrainSchedule::lr_at(std::size_t epoch) const {
  return epoch < lr_drop_epoch ? lr_initial : lr_final;
}

AugmentationConfig AugmentationConfig::desk() {
  AugmentationConfig a;
  a.translation_mm = 3.0;
  a.affine_probability = 0.5;
  a.bias_probability = 0.5;
  return a;
}

AugmentationConfig AugmentationConfig::none() {
  AugmentationConfig a;
  a.translation_mm = 0;
  a.rotation_deg = 0;
  a.scale_min = a.scale_max = 1.0;
  a.bias_coeff = 0;
  a.affine_probability = 0;
  a.bias_probability = 0;
  a.internal_scale = false;
  return a;
}

void AugmentationConfig::validate() const {
  if (translation_mm < 0 || rotation_deg < 0 || bias_coeff < 0)
    throw ConfigError("augmentation: ranges must be non-negative");
  if (!(scale_min > 0) || scale_max < scale_min)
    throw ConfigError("augmentation: scale interval must be positive and ordered");
  if (!(internal_scale_min > 0) || internal_scale_max < internal_scale_min)
    throw ConfigError("augmentation: internal scale interval must be positive and ordered");
  if (bias_order < 0 || bias_order > 6)
    throw ConfigError("augmentation: bias order must be in [0, 6]");
  for (double p : {affine_probability, bias_probability})
    if (!(p >= 0 && p <= 1)) throw ConfigError("augmentation: probability outside [0, 1]");
}

// ------------------------------------------------------------------ loss

std::vector<double> median_frequency_weights(std::span<const double> freqs) {
  if (freqs.empty()) throw ConfigError("no class frequencies");
  double total = 0;
  for (double f : freqs) {
    if (!(f > 0)) throw ConfigError("class frequency must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("class frequencies must sum to 1");
  std::vector<double> sorted(freqs.begin(), freqs.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median =
      n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = median / freqs[i];
  return w;
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& logits, std::span<const std::uint16_t> target,
                        std::span<const double> class_weights, const LossConfig& cfg) {
  if (!logits.defined() || logits.rank() != 4)
    throw ShapeError("loss expects NCHW logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const std::size_t hw = logits.dim(2) * logits.dim(3);
  if (target.size() != n * hw)
    throw ShapeError("loss: target has " + std::to_string(target.size()) +
                     " labels for logits " + shape_str(logits.shape()));
  if (class_weights.size() != c)
    throw ShapeError("loss: " + std::to_string(class_weights.size()) +
                     " class weights for " + std::to_string(c) + " classes");
  for (auto t : target)
    if (t >= c)
      throw ShapeError("loss: label " + std::to_string(t) + " needs more than " +
                       std::to_string(c) + " logit channels");

  const T* z = logits.data().data();
  std::vector<double> p(n * c * hw);
  double ce = 0, wsum = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t v = 0; v < hw; ++v) {
      const std::size_t base = b * c * hw + v;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, static_cast<double>(z[base + k * hw]));
      double s = 0;
      for (std::size_t k = 0; k < c; ++k) {
        const double e = std::exp(static_cast<double>(z[base + k * hw]) - mx);
        p[base + k * hw] = e;
        s += e;
      }
      for (std::size_t k = 0; k < c; ++k) p[base + k * hw] /= s;
      const std::uint16_t t = target[b * hw + v];
      const double w = class_weights[t];
      wsum += w;
      ce += w * -(static_cast<double>(z[base + t * hw]) - mx - std::log(s));
    }
  const double ce_term = wsum > 0 ? ce / wsum : 0.0;

  std::vector<double> inter(c, 0), psum(c, 0), gsum(c, 0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t v = 0; v < hw; ++v) {
        const double pv = p[b * c * hw + k * hw + v];
        psum[k] += pv;
        if (target[b * hw + v] == k) {
          inter[k] += pv;
          gsum[k] += 1;
        }
      }
  const double s = cfg.dice_smooth;
  std::size_t present = 0;
  double dice_mean = 0;
  for (std::size_t k = 0; k < c; ++k)
    if (gsum[k] > 0) {
      ++present;
      dice_mean += (2 * inter[k] + s) / (psum[k] + gsum[k] + s);
    }
  dice_mean /= static_cast<double>(present);
  const double loss = cfg.ce_weight * ce_term + cfg.dice_weight * (1.0 - dice_mean);

  std::vector<double> weights(class_weights.begin(), class_weights.end());
  std::vector<std::uint16_t> tgt(target.begin(), target.end());
  return autograd::make_result<T>(
      {1}, {static_cast<T>(loss)}, {logits},
      [p = std::move(p), tgt = std::move(tgt), weights = std::move(weights), inter,
       psum, gsum, present, wsum, cfg, n, c, hw](TensorNode<T>& self) {
        auto& parent = *self.parents[0];
        if (!parent.requires_grad) return;
        T* g = parent.grad_buffer().data();
        const double go = static_cast<double>(self.grad[0]);
        const double s = cfg.dice_smooth;
        // d(dice loss)/d(p_k) = -(1/|present|) * (2 g (U+s) - (2I+s)) / (U+s)^2
        std::vector<double> a(c, 0), bcoef(c, 0);
        for (std::size_t k = 0; k < c; ++k)
          if (gsum[k] > 0) {
            const double u = psum[k] + gsum[k] + s;
            a[k] = -2.0 / (u * static_cast<double>(present));
            bcoef[k] = (2 * inter[k] + s) / (u * u * static_cast<double>(present));
          }
        std::vector<double> dp(c);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t v = 0; v < hw; ++v) {
            const std::size_t base = b * c * hw + v;
            const std::uint16_t t = tgt[b * hw + v];
            double dot = 0;
            for (std::size_t k = 0; k < c; ++k) {
              dp[k] = gsum[k] > 0 ? (t == k ? a[k] : 0.0) + bcoef[k] : 0.0;
              dot += p[base + k * hw] * dp[k];
            }
            const double wce = wsum > 0 ? cfg.ce_weight * weights[t] / wsum : 0.0;
            for (std::size_t k = 0; k < c; ++k) {
              const double pk = p[base + k * hw];
              const double d = wce * (pk - (t == k ? 1.0 : 0.0)) +
                               cfg.dice_weight * pk * (dp[k] - dot);
              g[base + k * hw] += static_cast<T>(go * d);
            }
          }
      },
      "combined_loss");
}

// ------------------------------------------------------------------ dropout

ModalityMask sample_modality_mask(std::size_t epoch, std::size_t dropout_start,
                                  std::mt19937_64& rng) {
  if (epoch < dropout_start) return {true, true};
  switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
    case 0: return {true, true};
    case 1: return {true, false};
    default: return {false, true};
  }
}

// ------------------------------------------------------------------ affine

bool AffineParams::is_identity() const {
  for (int a = 0; a < 3; ++a)
    if (translation_mm[a] != 0 || rotation_deg[a] != 0) return false;
  return scale == 1.0;
}

AffineParams draw_affine(std::mt19937_64& rng, const AugmentationConfig& cfg) {
  AffineParams p;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int a = 0; a < 3; ++a) p.translation_mm[a] = unit(rng) * cfg.translation_mm;
  for (int a = 0; a < 3; ++a) p.rotation_deg[a] = unit(rng) * cfg.rotation_deg;
  p.scale = std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);
  if (cfg.scale_min == cfg.scale_max) p.scale = cfg.scale_min;
  return p;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

// Inverse of the linear part: R^T / scale with R = Rz * Ry * Rx.
Mat3 inverse_linear(const AffineParams& p) {
  const double d2r = std::numbers::pi / 180.0;
  const double ax = p.rotation_deg[0] * d2r, ay = p.rotation_deg[1] * d2r,
               az = p.rotation_deg[2] * d2r;
  const Mat3 rx{{{1, 0, 0}, {0, std::cos(ax), -std::sin(ax)}, {0, std::sin(ax), std::cos(ax)}}};
  const Mat3 ry{{{std::cos(ay), 0, std::sin(ay)}, {0, 1, 0}, {-std::sin(ay), 0, std::cos(ay)}}};
  const Mat3 rz{{{std::cos(az), -std::sin(az), 0}, {std::sin(az), std::cos(az), 0}, {0, 0, 1}}};
  const Mat3 r = matmul(rz, matmul(ry, rx));
  Mat3 inv{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv[i][j] = r[j][i] / p.scale;
  return inv;
}

double snap(double x) {
  const double r = std::round(x);
  return std::abs(x - r) < 1e-9 ? r : x;
}

// Source position (voxel units) of every output voxel.
template <typename F>
void for_each_source(const Dims3& d, double voxel_mm, const AffineParams& p, F&& f) {
  const Mat3 m = inverse_linear(p);
  const double c[3] = {(d.x - 1) / 2.0, (d.y - 1) / 2.0, (d.z - 1) / 2.0};
  const double t[3] = {p.translation_mm[0] / voxel_mm, p.translation_mm[1] / voxel_mm,
                       p.translation_mm[2] / voxel_mm};
  for (std::size_t k = 0; k < d.z; ++k)
    for (std::size_t j = 0; j < d.y; ++j)
      for (std::size_t i = 0; i < d.x; ++i) {
        const double q[3] = {static_cast<double>(i) - c[0] - t[0],
                             static_cast<double>(j) - c[1] - t[1],
                             static_cast<double>(k) - c[2] - t[2]};
        double s[3];
        for (int a = 0; a < 3; ++a)
          s[a] = snap(c[a] + m[a][0] * q[0] + m[a][1] * q[1] + m[a][2] * q[2]);
        f(d.index(i, j, k), s);
      }
}

float trilinear_zero(const Volume3D& v, const double s[3]) {
  const long n[3] = {static_cast<long>(v.dims.x), static_cast<long>(v.dims.y),
                     static_cast<long>(v.dims.z)};
  long i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double fl = std::floor(s[a]);
    i0[a] = static_cast<long>(fl);
    f[a] = s[a] - fl;
    if (i0[a] + 1 < 0 || i0[a] > n[a] - 1) return 0.0f;
  }
  double acc = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) *
                         (dz ? f[2] : 1 - f[2]);
        if (w == 0) continue;
        const long x = i0[0] + dx, y = i0[1] + dy, z = i0[2] + dz;
        if (x < 0 || y < 0 || z < 0 || x >= n[0] || y >= n[1] || z >= n[2]) continue;
        acc += w * v.data[v.dims.index(x, y, z)];
      }
  return static_cast<float>(acc);
}

}  // namespace

MultiModalSample apply_affine(const MultiModalSample& s, const AffineParams& p) {
  if (!(p.scale > 0)) throw ConfigError("affine scale must be positive");
  if (p.is_identity()) return s;
  const Dims3 d = s.dims();
  const double vox = s.voxel_size_mm();
  auto warp = [&](const Volume3D& v) {
    Volume3D out = Volume3D::create(d, vox);
    for_each_source(d, vox, p, [&](std::size_t o, const double src[3]) {
      out.data[o] = trilinear_zero(v, src);
    });
    return out;
  };
  std::optional<Volume3D> t1, t2;
  if (s.t1()) t1 = warp(*s.t1());
  if (s.t2()) t2 = warp(*s.t2());
  LabelMap3D gt = LabelMap3D::create(d, vox);
  for_each_source(d, vox, p, [&](std::size_t o, const double src[3]) {
    long idx[3];
    for (int a = 0; a < 3; ++a) {
      idx[a] = std::lround(src[a]);
      if (idx[a] < 0 || idx[a] >= static_cast<long>(d[a])) return;
    }
    gt.labels[o] = s.gt().labels[d.index(idx[0], idx[1], idx[2])];
  });
  return MultiModalSample(std::move(t1), std::move(t2), std::move(gt));
}

MultiModalSample augment_affine(const MultiModalSample& s, std::mt19937_64& rng,
                                const AugmentationConfig& cfg) {
  cfg.validate();
  return apply_affine(s, draw_affine(rng, cfg));
}

// ------------------------------------------------------------------ bias field

std::size_t bias_coefficient_count(int order) {
  if (order < 0) throw ConfigError("bias order must be non-negative");
  const std::size_t o = static_cast<std::size_t>(order);
  return (o + 1) * (o + 2) * (o + 3) / 6;
}

std::vector<float> bias_field(const Dims3& dims, std::span<const double> coefficients,
                              int order) {
  if (coefficients.size() != bias_coefficient_count(order))
    throw ConfigError("bias field needs " + std::to_string(bias_coefficient_count(order)) +
                      " coefficients for order " + std::to_string(order));
  auto axis = [](std::size_t n) {
    std::vector<double> c(n, 0.0);
    for (std::size_t i = 0; i < n && n > 1; ++i)
      c[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    return c;
  };
  // powers[e][i] = coordinate_i^e per axis
  auto powers = [&](const std::vector<double>& c) {
    std::vector<std::vector<double>> p(order + 1, std::vector<double>(c.size(), 1.0));
    for (int e = 1; e <= order; ++e)
      for (std::size_t i = 0; i < c.size(); ++i) p[e][i] = p[e - 1][i] * c[i];
    return p;
  };
  const auto px = powers(axis(dims.x)), py = powers(axis(dims.y)), pz = powers(axis(dims.z));
  std::vector<float> field(dims.count());
  for (std::size_t k = 0; k < dims.z; ++k)
    for (std::size_t j = 0; j < dims.y; ++j)
      for (std::size_t i = 0; i < dims.x; ++i) {
        double acc = 0;
        std::size_t idx = 0;
        for (int a = 0; a <= order; ++a)
          for (int b = 0; b <= order - a; ++b)
            for (int c = 0; c <= order - a - b; ++c)
              acc += coefficients[idx++] * px[a][i] * py[b][j] * pz[c][k];
        field[dims.index(i, j, k)] = static_cast<float>(std::exp(acc));
      }
  return field;
}

Volume3D apply_bias_field(const Volume3D& v, std::span<const double> coefficients,
                          int order) {
  v.validate();
  const auto field = bias_field(v.dims, coefficients, order);
  Volume3D out = v;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= field[i];
  return out;
}

Volume3D augment_bias_field(const Volume3D& v, std::mt19937_64& rng,
                            const AugmentationConfig& cfg) {
  cfg.validate();
  std::vector<double> coeff(bias_coefficient_count(cfg.bias_order));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (auto& c : coeff) c = unit(rng) * cfg.bias_coeff;
  return apply_bias_field(v, coeff, cfg.bias_order);
}

double draw_internal_scale(std::mt19937_64& rng, const AugmentationConfig& cfg) {
  if (cfg.internal_scale_min == cfg.internal_scale_max) return cfg.internal_scale_min;
  return std::uniform_real_distribution<double>(cfg.internal_scale_min,
                                                cfg.internal_scale_max)(rng);
}

// ------------------------------------------------------------------ optimizer

template <typename T>
void adamw_step(std::span<Tensor<T>> params, AdamWState& state, double lr, double wd,
                const AdamWConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw StateError("optimizer state does not match parameters");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != data.size()) throw StateError("optimizer state does not match parameters");
    const bool has = params[i].has_grad();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = has ? static_cast<double>(params[i].grad()[k]) : 0.0;
      m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g;
      const double mh = m[k] / bc1, vh = v[k] / bc2;
      const double p = static_cast<double>(data[k]);
      data[k] = static_cast<T>(p - lr * wd * p - lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

// ------------------------------------------------------------------ loop

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,loss,w_t1,w_t2,lr\n";
  out.precision(10);
  for (const auto& e : epochs)
    out << e.epoch << ',' << e.loss << ',' << e.w_t1 << ',' << e.w_t2 << ',' << e.lr << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

LabelMap3D plane_labels(const LabelMap3D& gt, Plane plane, const LabelScheme& scheme) {
  LabelMap3D out = gt;
  if (plane == Plane::sagittal)
    for (auto& l : out.labels) l = scheme.to_sagittal(l);
  else
    for (auto l : out.labels)
      if (l >= scheme.class_count()) throw DataError("label " + std::to_string(l) + " outside scheme");
  return out;
}

std::vector<double> dataset_class_weights(const std::vector<MultiModalSample>& data,
                                          Plane plane, const LabelScheme& scheme) {
  const std::size_t c =
      plane == Plane::sagittal ? scheme.sagittal_class_count() : scheme.class_count();
  std::vector<double> counts(c, 0.0);
  double total = 0;
  for (const auto& s : data) {
    for (auto l : plane_labels(s.gt(), plane, scheme).labels) counts[l] += 1;
    total += static_cast<double>(s.gt().labels.size());
  }
  std::vector<double> freqs;
  for (double n : counts)
    if (n > 0) freqs.push_back(n / total);
  const auto present = median_frequency_weights(freqs);
  std::vector<double> w(c, 0.0);
  for (std::size_t k = 0, j = 0; k < c; ++k)
    if (counts[k] > 0) w[k] = present[j++];
  return w;
}

namespace {

std::vector<std::size_t> pick_slices(const LabelMap3D& labels, Plane plane,
                                     std::size_t count, std::mt19937_64& rng) {
  const std::size_t n = slice_count(labels.dims, plane);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (count == 0 || count >= n) return all;
  std::vector<std::size_t> fg, bg;
  const auto [h, w] = slice_extent(labels.dims, plane);
  for (std::size_t s = 0; s < n; ++s) {
    bool any = false;
    for (std::size_t r = 0; r < h && !any; ++r)
      for (std::size_t c = 0; c < w && !any; ++c)
        any = labels.labels[voxel_index(labels.dims, plane, s, r, c)] != 0;
    (any ? fg : bg).push_back(s);
  }
  std::shuffle(fg.begin(), fg.end(), rng);
  std::shuffle(bg.begin(), bg.end(), rng);
  std::vector<std::size_t> out(fg.begin(), fg.begin() + std::min(count, fg.size()));
  for (std::size_t i = 0; out.size() < count; ++i) out.push_back(bg[i]);
  return out;
}

struct TrainItem {
  std::size_t sample;
  std::size_t slice;
  Availability use;
};

}  // namespace

template <typename T>
TrainHistory train_plane(PlaneNet<T>& net, const std::vector<MultiModalSample>& data,
                         const LabelScheme& scheme, const TrainOptions& opt) {
  if (data.empty()) throw UsageError("training set is empty");
  opt.schedule.validate();
  opt.augmentation.validate();
  const auto& cfg = net.config();
  const Plane plane = cfg.plane;
  const std::size_t classes =
      plane == Plane::sagittal ? scheme.sagittal_class_count() : scheme.class_count();
  if (cfg.class_count != classes)
    throw ConfigError("network has " + std::to_string(cfg.class_count) + " classes, the " +
                      to_string(plane) + " view of scheme " + scheme.name() + " needs " +
                      std::to_string(classes));
  for (const auto& s : data)
    if (!(s.dims() == data.front().dims()) || s.voxel_size_mm() != data.front().voxel_size_mm())
      throw DataError("training volumes must share one grid");

  const auto weights = dataset_class_weights(data, plane, scheme);
  std::vector<Tensor<T>> params;
  for (auto& p : net.parameters()) params.push_back(p.tensor);
  AdamWState state;
  const auto& aug = opt.augmentation;
  const std::size_t k = cfg.slice_thickness;
  const auto [h, w] = slice_extent(data.front().dims(), plane);
  const std::size_t per = k * h * w;

  TrainHistory history;
  for (std::size_t epoch = 0; epoch < opt.schedule.epochs; ++epoch) {
    const double lr = opt.schedule.lr_at(epoch);
    const std::uint64_t epoch_seed = mix_seed(opt.seed, epoch + 1);
    std::vector<MultiModalSample> volumes;
    std::vector<LabelMap3D> labels;
    std::vector<TrainItem> items;
    volumes.reserve(data.size());
    for (std::size_t si = 0; si < data.size(); ++si) {
      std::mt19937_64 rng(mix_seed(epoch_seed, si));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      MultiModalSample s = data[si];
      if (unit(rng) < aug.affine_probability) s = augment_affine(s, rng, aug);
      if (unit(rng) < aug.bias_probability) {
        std::optional<Volume3D> t1 = s.t1(), t2 = s.t2();
        if (t1) t1 = augment_bias_field(*t1, rng, aug);
        if (t2) t2 = augment_bias_field(*t2, rng, aug);
        s = MultiModalSample(std::move(t1), std::move(t2), s.gt());
      }
      if (cfg.normalize_intensity) s = s.intensity_normalized();
      labels.push_back(plane_labels(s.gt(), plane, scheme));
      for (std::size_t slice :
           pick_slices(labels.back(), plane, opt.schedule.slices_per_volume, rng)) {
        Availability use{true, true};
        if (opt.modality_dropout)
          use = sample_modality_mask(epoch, opt.schedule.modality_dropout_start, rng);
        const Availability have = s.availability();
        Availability both{use.t1 && have.t1, use.t2 && have.t2};
        items.push_back({si, slice, both.any() ? both : have});
      }
      volumes.push_back(std::move(s));
    }
    std::mt19937_64 epoch_rng(mix_seed(epoch_seed, 0xba7c4));
    std::shuffle(items.begin(), items.end(), epoch_rng);

    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < items.size(); start += opt.schedule.batch) {
      const std::size_t end = std::min(items.size(), start + opt.schedule.batch);
      const std::size_t nb = end - start;
      std::vector<T> x1, x2;
      std::vector<std::uint16_t> target;
      target.reserve(nb * h * w);
      PlaneInput<T> in;
      in.native_voxel_mm = data.front().voxel_size_mm();
      for (std::size_t i = start; i < end; ++i) {
        const auto& it = items[i];
        const auto& vol = volumes[it.sample];
        FusionRoute r;
        if (it.use.t1) {
          r.t1_row = static_cast<int>(x1.size() / per);
          x1.resize(x1.size() + per);
          extract_slice_stack<T>(*vol.t1(), plane, {it.slice, k}, x1.data() + x1.size() - per);
        }
        if (it.use.t2) {
          r.t2_row = static_cast<int>(x2.size() / per);
          x2.resize(x2.size() + per);
          extract_slice_stack<T>(*vol.t2(), plane, {it.slice, k}, x2.data() + x2.size() - per);
        }
        in.routes.push_back(r);
        const auto lab = extract_label_slice(labels[it.sample], plane, it.slice);
        target.insert(target.end(), lab.begin(), lab.end());
      }
      const std::size_t n1 = x1.size() / per, n2 = x2.size() / per;
      if (n1 > 0) in.t1 = Tensor<T>::from_data({n1, k, h, w}, std::move(x1));
      if (n2 > 0) in.t2 = Tensor<T>::from_data({n2, k, h, w}, std::move(x2));
      const double jitter = aug.internal_scale ? draw_internal_scale(epoch_rng, aug) : 1.0;

      Tensor<T> logits = net.forward(in, {true, jitter});
      Tensor<T> loss = combined_loss(logits, std::span<const std::uint16_t>(target),
                                     std::span<const double>(weights), opt.loss);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "non-finite loss " << lv << " in " << to_string(plane) << " training, epoch "
            << epoch << ", batch " << batches << ", lr " << lr;
        throw NumericalError(msg.str());
      }
      net.zero_grad();
      backward(loss);
      adamw_step<T>(params, state, lr, opt.schedule.weight_decay);
      loss_sum += lv;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.lr = lr;
    const auto& fw = net.fusion();
    for (std::size_t i = 0; i < fw.size(); ++i) {
      rec.w_t1 += fw.size() == 1 ? static_cast<double>(fw.w_t1.data()[i])
                                 : std::abs(static_cast<double>(fw.w_t1.data()[i]));
      rec.w_t2 += fw.size() == 1 ? static_cast<double>(fw.w_t2.data()[i])
                                 : std::abs(static_cast<double>(fw.w_t2.data()[i]));
    }
    rec.w_t1 /= static_cast<double>(fw.size());
    rec.w_t2 /= static_cast<double>(fw.size());
    history.epochs.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(plane, rec);
  }
  return history;
}

template <typename T>
std::array<TrainHistory, 3> train_model(HMVINN<T>& model,
                                        const std::vector<MultiModalSample>& data,
                                        const TrainOptions& opt) {
  std::array<TrainHistory, 3> out;
  for (Plane p : {Plane::axial, Plane::coronal, Plane::sagittal}) {
    TrainOptions o = opt;
    o.seed = mix_seed(opt.seed, 0x706c616e65ull + static_cast<std::uint64_t>(p));
    out[static_cast<std::size_t>(p)] = train_plane(model.plane(p), data, model.scheme(), o);
  }
  return out;
}

// ------------------------------------------------------------------ config file

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok |= key == k;
    if (!ok) throw ConfigError(std::string("unknown key '") + key + "' in " + where);
  }
}

template <typename V>
void read(const json& j, const char* key, V& dst) {
  if (j.contains(key)) dst = j.at(key).get<V>();
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig cfg;
  try {
    const json j = json::parse(text);
    check_keys(j, {"preset", "seed", "fusion", "transition", "modality_dropout", "schedule",
                   "augmentation", "loss"},
               "training config");
    read(j, "preset", cfg.preset);
    if (cfg.preset == "desk") {
      cfg.options.schedule = TrainSchedule::desk();
      cfg.options.augmentation = AugmentationConfig::desk();
    } else if (cfg.preset == "paper") {
      cfg.options.schedule = TrainSchedule::paper();
      cfg.options.augmentation = AugmentationConfig{};
    } else {
      throw ConfigError("unknown preset '" + cfg.preset + "'");
    }
    read(j, "seed", cfg.options.seed);
    read(j, "modality_dropout", cfg.options.modality_dropout);
    if (j.contains("fusion")) cfg.fusion = fusion_mode_from_string(j.at("fusion").get<std::string>());
    if (j.contains("transition"))
      cfg.transition = scale_transition_from_string(j.at("transition").get<std::string>());
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      check_keys(s, {"epochs", "batch", "lr_initial", "lr_final", "lr_drop_epoch",
                     "weight_decay", "modality_dropout_start", "slices_per_volume"},
                 "schedule");
      auto& d = cfg.options.schedule;
      read(s, "epochs", d.epochs);
      read(s, "batch", d.batch);
      read(s, "lr_initial", d.lr_initial);
      read(s, "lr_final", d.lr_final);
      read(s, "lr_drop_epoch", d.lr_drop_epoch);
      read(s, "weight_decay", d.weight_decay);
      read(s, "modality_dropout_start", d.modality_dropout_start);
      read(s, "slices_per_volume", d.slices_per_volume);
    }
    if (j.contains("augmentation")) {
      const auto& a = j.at("augmentation");
      check_keys(a, {"translation_mm", "rotation_deg", "scale_min", "scale_max", "bias_coeff",
                     "bias_order", "internal_scale_min", "internal_scale_max",
                     "affine_probability", "bias_probability", "internal_scale"},
                 "augmentation");
      auto& d = cfg.options.augmentation;
      read(a, "translation_mm", d.translation_mm);
      read(a, "rotation_deg", d.rotation_deg);
      read(a, "scale_min", d.scale_min);
      read(a, "scale_max", d.scale_max);
      read(a, "bias_coeff", d.bias_coeff);
      read(a, "bias_order", d.bias_order);
      read(a, "internal_scale_min", d.internal_scale_min);
      read(a, "internal_scale_max", d.internal_scale_max);
      read(a, "affine_probability", d.affine_probability);
      read(a, "bias_probability", d.bias_probability);
      read(a, "internal_scale", d.internal_scale);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      check_keys(l, {"ce_weight", "dice_weight", "dice_smooth"}, "loss");
      read(l, "ce_weight", cfg.options.loss.ce_weight);
      read(l, "dice_weight", cfg.options.loss.dice_weight);
      read(l, "dice_smooth", cfg.options.loss.dice_smooth);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  cfg.options.schedule.validate();
  cfg.options.augmentation.validate();
  return cfg;
}

PlaneNetConfig TrainConfig::network(std::size_t class_count) const {
  PlaneNetConfig c = preset == "paper" ? PlaneNetConfig::paper(Plane::axial, class_count)
                                       : PlaneNetConfig::desk(Plane::axial, class_count);
  c.fusion = fusion;
  c.transition = transition;
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return train_config_from_json(ss.str());
}

std::string train_config_to_json(const TrainConfig& cfg) {
  const auto& s = cfg.options.schedule;
  const auto& a = cfg.options.augmentation;
  const auto& l = cfg.options.loss;
  json j = {
      {"preset", cfg.preset},
      {"seed", cfg.options.seed},
      {"fusion", to_string(cfg.fusion)},
      {"transition", to_string(cfg.transition)},
      {"modality_dropout", cfg.options.modality_dropout},
      {"schedule",
       {{"epochs", s.epochs},
        {"batch", s.batch},
        {"lr_initial", s.lr_initial},
        {"lr_final", s.lr_final},
        {"lr_drop_epoch", s.lr_drop_epoch},
        {"weight_decay", s.weight_decay},
        {"modality_dropout_start", s.modality_dropout_start},
        {"slices_per_volume", s.slices_per_volume}}},
      {"augmentation",
       {{"translation_mm", a.translation_mm},
        {"rotation_deg", a.rotation_deg},
        {"scale_min", a.scale_min},
        {"scale_max", a.scale_max},
        {"bias_coeff", a.bias_coeff},
        {"bias_order", a.bias_order},
        {"internal_scale_min", a.internal_scale_min},
        {"internal_scale_max", a.internal_scale_max},
        {"affine_probability", a.affine_probability},
        {"bias_probability", a.bias_probability},
        {"internal_scale", a.internal_scale}}},
      {"loss",
       {{"ce_weight", l.ce_weight}, {"dice_weight", l.dice_weight}, {"dice_smooth", l.dice_smooth}}},
  };
  return j.dump(2);
}

#define HYPKIT_INSTANTIATE_TRAIN(T)                                                   \
  template Tensor<T> combined_loss(const Tensor<T>&, std::span<const std::uint16_t>, \
                                   std::span<const double>, const LossConfig&);      \
  template void adamw_step(std::span<Tensor<T>>, AdamWState&, double, double,         \
                           const AdamWConfig&);                                       \
  template TrainHistory train_plane(PlaneNet<T>&, const std::vector<MultiModalSample>&, \
                                    const LabelScheme&, const TrainOptions&);         \
  template std::array<TrainHistory, 3> train_model(HMVINN<T>&,                        \
                                                   const std::vector<MultiModalSample>&, \
                                                   const TrainOptions&);

HYPKIT_INSTANTIATE_TRAIN(float)
HYPKIT_INSTANTIATE_TRAIN(double)

}  // namespace hypkit
