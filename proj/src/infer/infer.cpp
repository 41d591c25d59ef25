#include "hypkit/infer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "hypkit/errors.hpp"
#include "hypkit/mvol.hpp"
#include "hypkit/parallel.hpp"

namespace hypkit {

template <typename T>
ProbabilityVolume predict_plane(PlaneNet<T>& net, const MultiModalSample& raw,
                                Availability use, std::size_t slices_per_batch) {
  if (!use.any()) throw UsageError("no modality selected");
  if ((use.t1 && !raw.t1()) || (use.t2 && !raw.t2()))
    throw UsageError("requested modality is not available in the sample");
  if (slices_per_batch == 0) throw UsageError("slices_per_batch must be positive");
  const auto& cfg = net.config();
  const MultiModalSample s = cfg.normalize_intensity ? raw.intensity_normalized() : raw;
  const Dims3 d = s.dims();
  const std::size_t n = slice_count(d, cfg.plane);
  const auto [h, w] = slice_extent(d, cfg.plane);
  const std::size_t c = cfg.class_count, hw = h * w;
  ProbabilityVolume out = ProbabilityVolume::create(c, d, s.voxel_size_mm());
  autograd::NoGradGuard guard;
  for (std::size_t first = 0; first < n; first += slices_per_batch) {
    const std::size_t count = std::min(slices_per_batch, n - first);
    auto in = make_plane_input<T>(s, cfg.plane, cfg.slice_thickness, first, count, use);
    const Tensor<T> prob = softmax_channels(net.forward(in, {false, 1.0}));
    const T* p = prob.data().data();
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        float* dst = out.channel(k);
        const T* src = p + (i * c + k) * hw;
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t col = 0; col < w; ++col)
            dst[voxel_index(d, cfg.plane, first + i, r, col)] =
                static_cast<float>(src[r * w + col]);
      }
  }
  return out;
}

ProbabilityVolume remap_sagittal(const ProbabilityVolume& unified, const LabelScheme& scheme) {
  if (unified.class_count != scheme.sagittal_class_count())
    throw ConfigError("sagittal probabilities have " + std::to_string(unified.class_count) +
                      " classes, scheme " + scheme.name() + " unifies to " +
                      std::to_string(scheme.sagittal_class_count()));
  ProbabilityVolume out =
      ProbabilityVolume::create(scheme.class_count(), unified.dims, unified.voxel_size_mm);
  std::vector<bool> covered(scheme.class_count(), false);
  const std::size_t n = unified.dims.count();
  for (std::size_t u = 0; u < unified.class_count; ++u)
    for (auto full : scheme.from_sagittal(static_cast<std::uint16_t>(u))) {
      std::copy_n(unified.channel(u), n, out.channel(full));
      covered[full] = true;
    }
  for (std::size_t k = 0; k < covered.size(); ++k)
    if (!covered[k]) throw ConfigError("sagittal remap leaves class " + std::to_string(k) + " unmapped");
  return out;
}

Segmentation aggregate_views(const ProbabilityVolume& axial, const ProbabilityVolume& coronal,
                             const ProbabilityVolume& sagittal_full,
                             const std::array<double, 3>& weights) {
  for (const auto* p : {&coronal, &sagittal_full})
    if (p->class_count != axial.class_count || !(p->dims == axial.dims))
      throw ShapeError("view probabilities differ in class count or grid");
  const std::size_t n = axial.dims.count(), c = axial.class_count;
  ProbabilityVolume out = ProbabilityVolume::create(c, axial.dims, axial.voxel_size_mm);
  std::vector<double> acc(c);
  for (std::size_t v = 0; v < n; ++v) {
    double total = 0;
    for (std::size_t k = 0; k < c; ++k) {
      acc[k] = weights[0] * axial.channel(k)[v] + weights[1] * coronal.channel(k)[v] +
               weights[2] * sagittal_full.channel(k)[v];
      total += acc[k];
    }
    if (!(total > 0)) throw DataError("view probabilities vanish at a voxel");
    for (std::size_t k = 0; k < c; ++k) out.channel(k)[v] = static_cast<float>(acc[k] / total);
  }
  Segmentation seg{argmax_labels(out), std::move(out)};
  return seg;
}

template <typename T>
Segmentation segment(HMVINN<T>& model, const MultiModalSample& s,
                     std::optional<Availability> use) {
  const Availability a = use.value_or(s.availability());
  std::array<ProbabilityVolume, 3> views;
  parallel_for(3, [&](std::size_t p) {
    views[p] = predict_plane(model.plane(static_cast<Plane>(p)), s, a);
  });
  views[2] = remap_sagittal(views[2], model.scheme());
  return aggregate_views(views[0], views[1], views[2], model.view_weights());
}

void write_sidecar(const std::filesystem::path& path, const SegmentationSidecar& meta) {
  nlohmann::json j = {
      {"modalities", {{"t1", meta.modalities.t1}, {"t2", meta.modalities.t2}}},
      {"voxel_size_mm", meta.voxel_size_mm},
      {"dims", {meta.dims.x, meta.dims.y, meta.dims.z}},
      {"model_checksum", meta.model_checksum},
  };
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

SegmentationSidecar read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  SegmentationSidecar m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.modalities.t1 = j.at("modalities").at("t1").get<bool>();
    m.modalities.t2 = j.at("modalities").at("t2").get<bool>();
    m.voxel_size_mm = j.at("voxel_size_mm").get<double>();
    const auto d = j.at("dims");
    m.dims = {d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>(), d.at(2).get<std::size_t>()};
    m.model_checksum = j.at("model_checksum").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

namespace {

std::filesystem::path class_path(const std::filesystem::path& stem, std::size_t k) {
  return stem.parent_path() / (stem.filename().string() + "_p" + std::to_string(k) + ".mvol");
}

}  // namespace

std::vector<std::filesystem::path> write_probability_stack(const ProbabilityVolume& p,
                                                           const std::filesystem::path& stem) {
  std::vector<std::filesystem::path> out;
  const std::size_t n = p.dims.count();
  for (std::size_t k = 0; k < p.class_count; ++k) {
    Volume3D v = Volume3D::create(p.dims, p.voxel_size_mm);
    std::copy_n(p.channel(k), n, v.data.begin());
    out.push_back(class_path(stem, k));
    write_mvol(v, out.back());
  }
  return out;
}

ProbabilityVolume read_probability_stack(const std::filesystem::path& stem,
                                         std::size_t class_count) {
  if (class_count == 0) throw UsageError("probability stack needs at least one class");
  ProbabilityVolume out;
  for (std::size_t k = 0; k < class_count; ++k) {
    const Volume3D v = read_mvol_volume(class_path(stem, k));
    if (k == 0) out = ProbabilityVolume::create(class_count, v.dims, v.voxel_size_mm);
    if (!(v.dims == out.dims) || v.voxel_size_mm != out.voxel_size_mm)
      throw FormatError("probability stack " + stem.string() + " mixes grids");
    std::copy(v.data.begin(), v.data.end(), out.channel(k));
  }
  return out;
}

template ProbabilityVolume predict_plane(PlaneNet<float>&, const MultiModalSample&,
                                         Availability, std::size_t);
template ProbabilityVolume predict_plane(PlaneNet<double>&, const MultiModalSample&,
                                         Availability, std::size_t);
template Segmentation segment(HMVINN<float>&, const MultiModalSample&, std::optional<Availability>);
template Segmentation segment(HMVINN<double>&, const MultiModalSample&, std::optional<Availability>);

}  // namespace hypkit
