#include "hypkit/workflows.hpp"

#include <fstream>
#include <random>

#include "hypkit/errors.hpp"
#include "hypkit/resample.hpp"

namespace hypkit {

template <typename T>
Segmentation segment_with(HMVINN<T>& model, const MultiModalSample& s,
                          const EvaluationOptions& opt) {
  if (!opt.resample_mm) return segment(model, s, opt.use);
  const MultiModalSample low = resample_sample(s, *opt.resample_mm);
  const Segmentation seg = segment(model, low, opt.use);
  ProbabilityVolume up = upsample_probabilities(seg.probabilities, s.voxel_size_mm(), s.dims());
  LabelMap3D labels = argmax_labels(up);
  return {std::move(labels), std::move(up)};
}

template <typename T>
DatasetScores evaluate_model(HMVINN<T>& model, const std::vector<MultiModalSample>& data,
                             const EvaluationOptions& opt) {
  if (data.empty()) throw UsageError("evaluation needs at least one sample");
  DatasetScores out;
  for (const auto& s : data) {
    const Segmentation seg = segment_with(model, s, opt);
    out.reports.push_back(evaluate_report(seg.labels, s.gt(), model.scheme(), opt.pooling));
    const MetricRow& g = out.reports.back().global;
    if (!g.applicable) throw DataError("sample without any labeled structure");
    out.dice += *g.dice;
    out.vs += *g.vs;
    if (g.hd95_mm) {
      out.hd95_mm += *g.hd95_mm;
      ++out.hd95_samples;
    }
    ++out.samples;
  }
  out.dice /= static_cast<double>(out.samples);
  out.vs /= static_cast<double>(out.samples);
  if (out.hd95_samples > 0) out.hd95_mm /= static_cast<double>(out.hd95_samples);
  return out;
}

MultiModalSample simulate_rescan(const MultiModalSample& s, double cov, std::uint64_t seed) {
  if (!(cov >= 0)) throw UsageError("rescan noise must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  auto noisy = [&](const std::optional<Volume3D>& v) -> std::optional<Volume3D> {
    if (!v) return std::nullopt;
    Volume3D out = *v;
    for (auto& x : out.data) x = static_cast<float>(x * (1.0 + cov * n(rng)));
    return out;
  };
  auto t1 = noisy(s.t1());
  auto t2 = noisy(s.t2());
  return MultiModalSample(std::move(t1), std::move(t2), s.gt());
}

std::vector<AblationRow> ablate_fusion(
    const std::vector<MultiModalSample>& train, const std::vector<MultiModalSample>& test,
    const LabelScheme& scheme, const TrainConfig& cfg,
    const std::function<void(FusionMode, Plane, const EpochRecord&)>& on_epoch) {
  std::vector<AblationRow> rows;
  for (FusionMode mode : {FusionMode::global, FusionMode::per_channel}) {
    TrainConfig c = cfg;
    c.fusion = mode;
    HMVINN<float> model(scheme, c.network(scheme.class_count()), c.options.seed);
    TrainOptions opt = c.options;
    if (on_epoch) opt.on_epoch = [&](Plane p, const EpochRecord& r) { on_epoch(mode, p, r); };
    train_model(model, train, opt);
    rows.push_back({mode, evaluate_model(model, test)});
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.precision(10);
  out << "fusion,dice,vs,hd95_mm\n";
  for (const auto& r : rows) {
    out << to_string(r.fusion) << ',' << r.scores.dice << ',' << r.scores.vs << ',';
    if (r.scores.hd95_samples > 0)
      out << r.scores.hd95_mm;
    else
      out << "NA";
    out << '\n';
  }
}

template Segmentation segment_with(HMVINN<float>&, const MultiModalSample&, const EvaluationOptions&);
template Segmentation segment_with(HMVINN<double>&, const MultiModalSample&, const EvaluationOptions&);
template DatasetScores evaluate_model(HMVINN<float>&, const std::vector<MultiModalSample>&,
                                      const EvaluationOptions&);
template DatasetScores evaluate_model(HMVINN<double>&, const std::vector<MultiModalSample>&,
                                      const EvaluationOptions&);

}  // namespace hypkit
