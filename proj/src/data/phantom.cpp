#include "hypkit/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "hypkit/errors.hpp"

namespace hypkit {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the combined words
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double ellipsoid_volume(const std::array<double, 3>& r) {
  return 4.0 / 3.0 * std::numbers::pi * r[0] * r[1] * r[2];
}

void PhantomSpec::validate() const {
  if (dims.count() == 0) throw SpecError("phantom dims must be positive");
  if (!(voxel_size_mm > 0.0)) throw SpecError("phantom voxel size must be positive");
  if (class_count < 2) throw SpecError("phantom needs at least two classes");
  if (noise_sigma < 0.0 || center_jitter_mm < 0.0 || radius_jitter < 0.0 ||
      radius_jitter >= 1.0)
    throw SpecError("phantom noise/jitter settings out of range");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    if (s.label >= class_count)
      throw SpecError("shape '" + s.name + "' label exceeds class count");
    for (double r : s.radii_mm)
      if (s.mirror_of < 0 && !(r > 0.0)) throw SpecError("shape '" + s.name + "' has a non-positive radius");
    for (int ref : {s.mirror_of, s.nested_in})
      if (ref >= static_cast<int>(i))
        throw SpecError("shape '" + s.name + "' references a later shape");
  }
}

PhantomSpec PhantomSpec::desk(double voxel_size_mm, std::size_t extent) {
  PhantomSpec s;
  s.dims = {extent, extent, extent};
  s.voxel_size_mm = voxel_size_mm;
  s.class_count = 4;
  s.noise_sigma = 0.05;
  s.center_jitter_mm = 1.2;
  s.radius_jitter = 0.1;
  const double e = extent * voxel_size_mm;
  const double c = e / 2.0;
  s.shapes = {
      {"tissue", {c, c, c}, {0.39 * e, 0.39 * e, 0.37 * e}, 0, 0.35f, 0.55f, -1, -1},
      {"left", {c - 0.19 * e, c, c - 0.05 * e}, {0.10 * e, 0.14 * e, 0.11 * e}, 1,
       0.85f, 0.30f, -1, -1},
      {"right", {}, {}, 2, 0.70f, 0.30f, 1, -1},
      {"capsule", {c, c + 0.05 * e, c + 0.2 * e}, {0.16 * e, 0.15 * e, 0.12 * e}, 0,
       0.60f, 0.45f, -1, -1},
      {"core", {c, c + 0.05 * e, c + 0.2 * e}, {0.104 * e, 0.0975 * e, 0.078 * e}, 3,
       0.60f, 0.90f, -1, 3},
  };
  return s;
}

PhantomSpec PhantomSpec::sphere(std::size_t extent, double voxel_size_mm,
                                double radius_voxels) {
  PhantomSpec s;
  s.dims = {extent, extent, extent};
  s.voxel_size_mm = voxel_size_mm;
  s.class_count = 2;
  const double c = extent * voxel_size_mm / 2.0;
  const double r = radius_voxels * voxel_size_mm;
  s.shapes = {{"sphere", {c, c, c}, {r, r, r}, 1, 1.0f, 1.0f, -1, -1}};
  return s;
}

std::vector<PhantomShape> realize_geometry(const PhantomSpec& spec,
                                           std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(mix_seed(seed, 0x6e6f6d));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<PhantomShape> out;
  std::vector<double> scale(spec.shapes.size(), 1.0);
  out.reserve(spec.shapes.size());
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    PhantomShape s = spec.shapes[i];
    // Draw unconditionally so every shape consumes the same stream slots.
    const std::array<double, 3> dc{unit(rng), unit(rng), unit(rng)};
    const double ds = unit(rng);
    if (s.mirror_of >= 0) {
      const auto& src = out[s.mirror_of];
      s.center_mm = src.center_mm;
      s.center_mm[0] = spec.extent_mm(0) - src.center_mm[0];
      s.radii_mm = src.radii_mm;
      scale[i] = scale[s.mirror_of];
    } else if (s.nested_in >= 0) {
      const auto& tp = spec.shapes[s.nested_in];
      const auto& rp = out[s.nested_in];
      scale[i] = scale[s.nested_in];
      for (int a = 0; a < 3; ++a) {
        s.center_mm[a] = rp.center_mm[a] + (s.center_mm[a] - tp.center_mm[a]) * scale[i];
        s.radii_mm[a] *= scale[i];
      }
    } else {
      scale[i] = 1.0 + spec.radius_jitter * ds;
      for (int a = 0; a < 3; ++a) {
        s.center_mm[a] += spec.center_jitter_mm * dc[a];
        s.radii_mm[a] *= scale[i];
      }
    }
    for (int a = 0; a < 3; ++a) {
      if (s.center_mm[a] - s.radii_mm[a] < 0.0 ||
          s.center_mm[a] + s.radii_mm[a] > spec.extent_mm(a))
        throw SpecError("shape '" + s.name + "' exceeds the volume bounds");
    }
    out.push_back(s);
  }
  return out;
}

std::vector<std::uint16_t> t2_only_classes(const PhantomSpec& spec) {
  std::vector<std::uint16_t> out;
  for (const auto& s : spec.shapes) {
    if (s.label == 0 || s.nested_in < 0) continue;
    const auto& parent = spec.shapes[s.nested_in];
    if (s.t1 == parent.t1 && s.t2 != parent.t2) out.push_back(s.label);
  }
  return out;
}

namespace {

bool inside(const PhantomShape& s, double x, double y, double z) {
  const double dx = (x - s.center_mm[0]) / s.radii_mm[0];
  const double dy = (y - s.center_mm[1]) / s.radii_mm[1];
  const double dz = (z - s.center_mm[2]) / s.radii_mm[2];
  return dx * dx + dy * dy + dz * dz <= 1.0;
}

// Index of the topmost shape covering the point, or -1.
int top_shape(const std::vector<PhantomShape>& shapes, double x, double y, double z) {
  for (int i = static_cast<int>(shapes.size()) - 1; i >= 0; --i)
    if (inside(shapes[i], x, y, z)) return i;
  return -1;
}

}  // namespace

MultiModalSample render_phantom(const PhantomSpec& spec,
                                const std::vector<PhantomShape>& shapes,
                                std::uint64_t noise_seed) {
  spec.validate();
  const auto d = spec.dims;
  const double vs = spec.voxel_size_mm;
  auto t1 = Volume3D::create(d, vs, spec.background_t1);
  auto t2 = Volume3D::create(d, vs, spec.background_t2);
  auto gt = LabelMap3D::create(d, vs, 0);
  for (std::size_t k = 0; k < d.z; ++k)
    for (std::size_t j = 0; j < d.y; ++j)
      for (std::size_t i = 0; i < d.x; ++i) {
        const int s = top_shape(shapes, (i + 0.5) * vs, (j + 0.5) * vs, (k + 0.5) * vs);
        if (s < 0) continue;
        const std::size_t v = d.index(i, j, k);
        gt.labels[v] = shapes[s].label;
        t1.data[v] = shapes[s].t1;
        t2.data[v] = shapes[s].t2;
      }
  if (spec.noise_sigma > 0.0) {
    std::mt19937_64 r1(mix_seed(noise_seed, 1)), r2(mix_seed(noise_seed, 2));
    std::normal_distribution<double> n1(0.0, spec.noise_sigma), n2(0.0, spec.noise_sigma);
    for (auto& v : t1.data) v = static_cast<float>(v + n1(r1));
    for (auto& v : t2.data) v = static_cast<float>(v + n2(r2));
  }
  return MultiModalSample(std::move(t1), std::move(t2), std::move(gt));
}

MultiModalSample generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  return render_phantom(spec, realize_geometry(spec, seed), seed);
}

ProbabilityVolume phantom_occupancy(const PhantomSpec& spec,
                                    const std::vector<PhantomShape>& shapes,
                                    std::size_t supersample) {
  if (supersample == 0) throw UsageError("supersample must be positive");
  const auto d = spec.dims;
  const double vs = spec.voxel_size_mm;
  auto p = ProbabilityVolume::create(spec.class_count, d, vs);
  const std::size_t n = d.count();
  const double w = 1.0 / static_cast<double>(supersample * supersample * supersample);
  for (std::size_t k = 0; k < d.z; ++k)
    for (std::size_t j = 0; j < d.y; ++j)
      for (std::size_t i = 0; i < d.x; ++i) {
        const std::size_t v = d.index(i, j, k);
        for (std::size_t a = 0; a < supersample; ++a)
          for (std::size_t b = 0; b < supersample; ++b)
            for (std::size_t c = 0; c < supersample; ++c) {
              const double x = (i + (c + 0.5) / supersample) * vs;
              const double y = (j + (b + 0.5) / supersample) * vs;
              const double z = (k + (a + 0.5) / supersample) * vs;
              const int s = top_shape(shapes, x, y, z);
              const std::size_t label = s < 0 ? 0 : shapes[s].label;
              p.data[label * n + v] += static_cast<float>(w);
            }
      }
  return p;
}

std::vector<CohortRecord> generate_covariates(std::size_t n, const EffectSpec& effect,
                                              std::uint64_t seed) {
  if (n < 10) throw SpecError("cohort needs at least 10 subjects");
  if (!(effect.age_max > effect.age_min)) throw SpecError("cohort age range is empty");
  std::vector<CohortRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = mix_seed(seed, 1000 + i);
    std::mt19937_64 rng(s);
    std::uniform_real_distribution<double> age(effect.age_min, effect.age_max);
    std::bernoulli_distribution sex(0.5);
    std::normal_distribution<double> etiv(effect.etiv_mean, effect.etiv_sd);
    CohortRecord r;
    r.id = "sub-" + std::to_string(i + 1);
    r.age = age(rng);
    r.sex = sex(rng) ? 1 : 0;
    r.etiv = etiv(rng);
    if (!(r.etiv > 0.0)) r.etiv = effect.etiv_mean;
    r.seed = s;
    out.push_back(r);
  }
  return out;
}

std::vector<CohortSubject> generate_cohort(std::size_t n, const EffectSpec& effect,
                                           const PhantomSpec& base,
                                           std::uint64_t seed) {
  base.validate();
  int target = -1;
  for (std::size_t i = 0; i < base.shapes.size(); ++i)
    if (base.shapes[i].label == effect.target_label && base.shapes[i].mirror_of < 0) {
      target = static_cast<int>(i);
      break;
    }
  if (target < 0) throw SpecError("cohort target label has no shape in the phantom");
  const double base_volume = effect.base_volume_mm3 > 0.0
                                 ? effect.base_volume_mm3
                                 : ellipsoid_volume(base.shapes[target].radii_mm);
  const double age_center = 0.5 * (effect.age_min + effect.age_max);

  auto records = generate_covariates(n, effect, seed);
  std::vector<CohortSubject> out;
  out.reserve(n);
  for (const auto& r : records) {
    std::mt19937_64 rng(mix_seed(r.seed, 7));
    std::normal_distribution<double> noise(0.0, 1.0);
    const double v = base_volume + effect.beta_age * (r.age - age_center) +
                     effect.beta_sex * r.sex +
                     effect.beta_etiv * (r.etiv - effect.etiv_mean) +
                     effect.noise_sd * noise(rng);
    if (!(v > 0.0))
      throw SpecError("effect specification yields a non-positive structure volume");
    auto shapes = realize_geometry(base, r.seed);
    const double f = std::cbrt(v / ellipsoid_volume(shapes[target].radii_mm));
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const bool scaled = static_cast<int>(i) == target ||
                          base.shapes[i].mirror_of == target ||
                          base.shapes[i].nested_in == target;
      if (!scaled) continue;
      for (int a = 0; a < 3; ++a) shapes[i].radii_mm[a] *= f;
      if (base.shapes[i].nested_in == target)
        for (int a = 0; a < 3; ++a)
          shapes[i].center_mm[a] = shapes[target].center_mm[a] +
                                   (shapes[i].center_mm[a] - shapes[target].center_mm[a]) * f;
      for (int a = 0; a < 3; ++a)
        if (shapes[i].center_mm[a] - shapes[i].radii_mm[a] < 0.0 ||
            shapes[i].center_mm[a] + shapes[i].radii_mm[a] > base.extent_mm(a))
          throw SpecError("scaled cohort structure exceeds the volume bounds");
    }
    out.push_back({r, v, render_phantom(base, shapes, r.seed)});
  }
  return out;
}

}  // namespace hypkit
