// Python bindings. Volumes cross the boundary as numpy arrays indexed
// [z, y, x], which matches the x-fastest storage order.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>

#include "hypkit/analysis.hpp"
#include "hypkit/checkpoint.hpp"
#include "hypkit/errors.hpp"
#include "hypkit/infer.hpp"
#include "hypkit/metrics.hpp"
#include "hypkit/model.hpp"
#include "hypkit/phantom.hpp"
#include "hypkit/stats.hpp"

namespace py = pybind11;
using namespace hypkit;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

Dims3 dims_of(const py::buffer_info& b, const char* what) {
  if (b.ndim != 3) throw ShapeError(std::string(what) + " must be a 3-d array");
  return {static_cast<std::size_t>(b.shape[2]), static_cast<std::size_t>(b.shape[1]),
          static_cast<std::size_t>(b.shape[0])};
}

template <typename T>
py::array_t<T> to_numpy(const Dims3& d, const std::vector<T>& v) {
  py::array_t<T> out({d.z, d.y, d.x});
  std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(T));
  return out;
}

Volume3D volume_from(const Array<float>& a, double voxel, const char* what) {
  Volume3D v;
  v.dims = dims_of(a.request(), what);
  v.voxel_size_mm = voxel;
  v.data.assign(a.data(), a.data() + a.size());
  v.validate();
  return v;
}

LabelMap3D labels_from(const Array<std::uint16_t>& a, double voxel) {
  LabelMap3D m;
  m.dims = dims_of(a.request(), "labels");
  m.voxel_size_mm = voxel;
  m.labels.assign(a.data(), a.data() + a.size());
  m.validate();
  return m;
}

BinaryMask mask_from(const Array<bool>& a) {
  auto m = BinaryMask::create(dims_of(a.request(), "mask"));
  for (py::ssize_t i = 0; i < a.size(); ++i) m.bits[i] = a.data()[i];
  return m;
}

py::dict sample_dict(const MultiModalSample& s) {
  py::dict d;
  if (s.t1()) d["t1"] = to_numpy(s.dims(), s.t1()->data);
  if (s.t2()) d["t2"] = to_numpy(s.dims(), s.t2()->data);
  d["gt"] = to_numpy(s.dims(), s.gt().labels);
  d["voxel_size_mm"] = s.voxel_size_mm();
  return d;
}

// A loaded three-plane model.
class Model {
 public:
  explicit Model(const std::string& path) : model_(load_checkpoint<float>(path)) {}

  py::tuple segment(std::optional<Array<float>> t1, std::optional<Array<float>> t2,
                    double voxel) {
    std::optional<Volume3D> v1, v2;
    if (t1) v1 = volume_from(*t1, voxel, "t1");
    if (t2) v2 = volume_from(*t2, voxel, "t2");
    if (!v1 && !v2) throw UsageError("segment needs at least one modality");
    const Dims3 d = v1 ? v1->dims : v2->dims;
    MultiModalSample s(std::move(v1), std::move(v2), LabelMap3D::create(d, voxel));
    Segmentation seg;
    {
      py::gil_scoped_release release;
      seg = hypkit::segment(model_, s);
    }
    const auto& p = seg.probabilities;
    py::array_t<float> probs({p.class_count, d.z, d.y, d.x});
    std::memcpy(probs.mutable_data(), p.data.data(), p.data.size() * sizeof(float));
    return py::make_tuple(to_numpy(d, seg.labels.labels), probs);
  }

  std::size_t class_count() const { return model_.scheme().class_count(); }

 private:
  HMVINN<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hetero-modal multi-view segmentation toolkit";

  static py::exception<Error> error(m, "HypkitError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error.ptr())(e.what());
      exc.attr("kind") = to_string(e.kind());
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  m.def(
      "desk_phantom",
      [](std::uint64_t seed, double voxel_size_mm, std::size_t extent,
         std::optional<double> noise_sigma) {
        auto spec = PhantomSpec::desk(voxel_size_mm, extent);
        if (noise_sigma) spec.noise_sigma = *noise_sigma;
        return sample_dict(generate_phantom(spec, seed));
      },
      py::arg("seed"), py::arg("voxel_size_mm") = 0.8, py::arg("extent") = 48,
      py::arg("noise_sigma") = py::none(),
      "Four-class desk phantom as a dict with t1, t2, gt and voxel_size_mm.");

  m.def(
      "dice",
      [](const Array<bool>& a, const Array<bool>& b) { return dice(mask_from(a), mask_from(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "volume_similarity",
      [](const Array<bool>& a, const Array<bool>& b) {
        return volume_similarity(mask_from(a), mask_from(b));
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "hd95",
      [](const Array<bool>& a, const Array<bool>& b, double voxel_size_mm) {
        return hd95(mask_from(a), mask_from(b), voxel_size_mm);
      },
      py::arg("a"), py::arg("b"), py::arg("voxel_size_mm"));

  m.def(
      "icc_a1",
      [](const Array<double>& table) {
        const auto b = table.request();
        if (b.ndim != 2) throw ShapeError("ICC table must be 2-d (subjects x raters)");
        Table t;
        t.rows = static_cast<std::size_t>(b.shape[0]);
        t.cols = static_cast<std::size_t>(b.shape[1]);
        t.values.assign(table.data(), table.data() + table.size());
        const auto r = icc_a1(t);
        return py::make_tuple(r.estimate, r.ci_low, r.ci_high);
      },
      py::arg("table"), "ICC(A,1) with its 95% interval: (estimate, low, high).");
  m.def(
      "wilcoxon",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        const auto r = wilcoxon_signed_rank(x, y);
        return py::make_tuple(r.w_plus, r.p_value);
      },
      py::arg("x"), py::arg("y"), "Paired signed-rank test: (W+, two-sided p).");

  m.def(
      "structure_volumes",
      [](const Array<std::uint16_t>& labels, double voxel_size_mm, std::size_t class_count) {
        return structure_volumes(labels_from(labels, voxel_size_mm), class_count);
      },
      py::arg("labels"), py::arg("voxel_size_mm"), py::arg("class_count"),
      "Volume in mm^3 of every class id.");

  m.def(
      "parameter_count",
      [](const std::string& preset, std::size_t class_count) {
        if (preset != "paper" && preset != "desk")
          throw ConfigError("unknown preset '" + preset + "'");
        const auto cfg = preset == "paper" ? PlaneNetConfig::paper(Plane::axial, class_count)
                                           : PlaneNetConfig::desk(Plane::axial, class_count);
        PlaneNet<float> net(cfg, 0);
        return net.parameter_count();
      },
      py::arg("preset"), py::arg("class_count"),
      "Trainable parameters of one plane network.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def_property_readonly("class_count", &Model::class_count)
      .def("segment", &Model::segment, py::arg("t1") = py::none(), py::arg("t2") = py::none(),
           py::arg("voxel_size_mm") = 1.0,
           "Labels [z, y, x] and probabilities [class, z, y, x].");
}
