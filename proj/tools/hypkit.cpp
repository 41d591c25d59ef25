#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "hypkit/analysis.hpp"
#include "hypkit/checkpoint.hpp"
#include "hypkit/dataset.hpp"
#include "hypkit/errors.hpp"
#include "hypkit/gradsuite.hpp"
#include "hypkit/mvol.hpp"
#include "hypkit/parallel.hpp"
#include "hypkit/phantom.hpp"
#include "hypkit/workflows.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace hypkit;

namespace {

constexpr const char* kPaperWarning =
    "warning: preset 'paper' trains full-width networks for 100 epochs at batch 16; "
    "on a CPU this takes days\n";

struct Args {
  std::size_t threads = 0;
  std::string config;

  // shared
  std::string data, out, model, test, scheme = "phantom4", preset = "desk";
  std::string fusion = "global", transition = "resolution_normalization";
  std::uint64_t seed = 0;
  std::string modalities;
  std::size_t epochs = 0;
  bool pv = false;

  // phantom
  std::size_t count = 25;
  double voxel_mm = 0.8;
  std::size_t extent = 48;
  std::string prefix = "phantom";
  bool cohort = false;
  double beta_age = 0, beta_sex = 0, beta_etiv = 0, noise_sd = 0;

  // train
  std::string history;

  // segment
  std::string id;
  bool probabilities = false;
  double resample_mm = 0;

  // evaluate
  std::string pred, gt, pooling = "mean";

  // retest
  std::string first, second;

  // associate
  std::string cohort_csv, volumes, segmentations, structure;

  // gradcheck
  std::size_t seeds = 10;
  double eps = 1e-6;
};

void add_train_flags(CLI::App* c, Args& a) {
  c->add_option("--seed", a.seed, "Random seed")->required();
  c->add_option("--preset", a.preset, "Network and schedule preset")
      ->check(CLI::IsMember({"desk", "paper"}));
  c->add_option("--epochs", a.epochs, "Override the preset's epoch count");
}

struct Cli {
  CLI::App app{"Hetero-modal 2.5D segmentation toolkit", "hypkit"};
  Args a;
  std::map<std::string, CLI::App*> cmd;

  Cli() {
    app.require_subcommand(1);
    // Global options are also accepted after the subcommand name.
    app.fallthrough();
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option("--threads", a.threads, "Worker thread cap (0: one per core)")
        ->envname("HYPKIT_THREADS");
    app.add_option("--config", a.config, "JSON file whose keys override command-line flags")
        ->check(CLI::ExistingFile);

    auto* c = cmd["phantom"] = app.add_subcommand("phantom", "Write a synthetic dataset");
    c->add_option("--out", a.out, "Output directory")->required();
    c->add_option("--seed", a.seed, "Random seed")->required();
    c->add_option("--count", a.count, "Number of samples");
    c->add_option("--voxel-mm", a.voxel_mm, "Voxel size in mm");
    c->add_option("--extent", a.extent, "Voxels per axis");
    c->add_option("--modalities", a.modalities, "Modalities to write, e.g. t1 or t1,t2");
    c->add_option("--prefix", a.prefix, "Sample id prefix");
    c->add_flag("--cohort", a.cohort, "Generate a cohort with injected volume effects");
    c->add_option("--beta-age", a.beta_age, "Injected age effect, mm^3 per year");
    c->add_option("--beta-sex", a.beta_sex, "Injected sex effect, mm^3");
    c->add_option("--beta-etiv", a.beta_etiv, "Injected eTIV effect, mm^3 per mm^3");
    c->add_option("--noise-sd", a.noise_sd, "Residual volume noise, mm^3");

    c = cmd["train"] = app.add_subcommand("train", "Train a model on a dataset");
    c->add_option("--data", a.data, "Training dataset directory")->required();
    c->add_option("--out", a.out, "Checkpoint path")->required();
    add_train_flags(c, a);
    c->add_option("--fusion", a.fusion, "Fusion weights")->check(CLI::IsMember({"global", "per_channel"}));
    c->add_option("--transition", a.transition, "Scale transition after the modality level")
        ->check(CLI::IsMember({"resolution_normalization", "fixed_pooling"}));
    c->add_option("--scheme", a.scheme, "Label scheme");
    c->add_option("--history", a.history, "History CSV (default: <out>.history.csv)");

    c = cmd["segment"] = app.add_subcommand("segment", "Segment samples with a trained model");
    c->add_option("--model", a.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    c->add_option("--data", a.data, "Dataset directory")->required();
    c->add_option("--out", a.out, "Output directory")->required();
    c->add_option("--id", a.id, "Segment only this sample");
    c->add_option("--modalities", a.modalities, "Modalities to use, e.g. t1 or t1,t2");
    c->add_flag("--probabilities", a.probabilities, "Also write per-class probability volumes");
    c->add_option("--resample-mm", a.resample_mm,
                  "Segment at this voxel size and upsample the probabilities back");

    c = cmd["evaluate"] = app.add_subcommand("evaluate", "Compare a label map with a reference");
    c->add_option("--pred", a.pred, "Predicted label .mvol")->required()->check(CLI::ExistingFile);
    c->add_option("--gt", a.gt, "Reference label .mvol")->required()->check(CLI::ExistingFile);
    c->add_option("--out", a.out, "Metric report CSV")->required();
    c->add_option("--scheme", a.scheme, "Label scheme");
    c->add_option("--pooling", a.pooling, "Region pooling")->check(CLI::IsMember({"mean", "pooled"}));

    c = cmd["retest"] = app.add_subcommand("retest", "Test-retest reliability of two segmentation runs");
    c->add_option("--first", a.first, "Segment output directory of the first scans")->required();
    c->add_option("--second", a.second, "Segment output directory of the repeat scans")->required();
    c->add_option("--out", a.out, "Reliability CSV")->required();
    c->add_option("--scheme", a.scheme, "Label scheme");
    c->add_flag("--pv", a.pv, "Use probability stacks for partial-volume volumes");

    c = cmd["associate"] = app.add_subcommand("associate", "Fit volume ~ age + sex + eTIV");
    c->add_option("--cohort", a.cohort_csv, "Cohort CSV")->required()->check(CLI::ExistingFile);
    auto* vol = c->add_option("--volumes", a.volumes, "Volume CSV (id plus one column per structure)");
    auto* seg = c->add_option("--segmentations", a.segmentations, "Segment output directory");
    vol->excludes(seg);
    c->add_option("--structure", a.structure, "Structure to model")->required();
    c->add_option("--out", a.out, "Regression CSV")->required();
    c->add_option("--scheme", a.scheme, "Label scheme");
    c->add_flag("--pv", a.pv, "Partial-volume volumes from probability stacks");

    c = cmd["ablate-fusion"] =
        app.add_subcommand("ablate-fusion", "Train global and per-channel fusion on one seed");
    c->add_option("--data", a.data, "Training dataset directory")->required();
    c->add_option("--test", a.test, "Test dataset directory")->required();
    c->add_option("--out", a.out, "Comparison CSV")->required();
    add_train_flags(c, a);
    c->add_option("--scheme", a.scheme, "Label scheme");

    c = cmd["gradcheck"] = app.add_subcommand("gradcheck", "Run the gradient suite");
    c->add_option("--seeds", a.seeds, "Seeded trials per case");
    c->add_option("--eps", a.eps, "Finite-difference step");
  }

  CLI::App* active() const {
    for (auto& [name, c] : cmd)
      if (c->parsed()) return c;
    return nullptr;
  }
};

std::string option_value(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw ConfigError("config value " + v.dump() + " is not a scalar");
}

// Keys of the config file that name an option of the active command (or a
// global option) are appended to the command line, so they win over flags.
// Returns the remaining keys.
json apply_config(Cli& cli, std::vector<std::string>& args) {
  std::ifstream in(cli.a.config);
  if (!in) throw IoError("cannot open " + cli.a.config);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(cli.a.config + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(cli.a.config + ": expected a JSON object");
  CLI::App* sub = cli.active();
  json rest = json::object();
  std::vector<std::string> global, local;
  for (auto& [key, value] : j.items()) {
    std::string flag = "--" + key;
    for (auto& ch : flag)
      if (ch == '_') ch = '-';
    if (flag == "--config") throw ConfigError("config files cannot nest");
    auto* target = cli.app.get_option_no_throw(flag) ? &global
                   : sub->get_option_no_throw(flag)  ? &local
                                                     : nullptr;
    if (!target || value.is_object()) {
      rest[key] = value;
      continue;
    }
    target->push_back(flag + "=" + option_value(value));
  }
  // Global options must precede the subcommand name.
  std::vector<std::string> merged;
  merged.insert(merged.end(), global.begin(), global.end());
  merged.insert(merged.end(), args.begin(), args.end());
  merged.insert(merged.end(), local.begin(), local.end());
  args = std::move(merged);
  return rest;
}

void reject_extra_config(const json& rest, const std::string& command) {
  if (!rest.empty())
    throw ConfigError("config key '" + rest.begin().key() + "' is not an option of " + command);
}

Availability parse_modalities(const std::string& s) {
  Availability a{false, false};
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "t1")
      a.t1 = true;
    else if (item == "t2")
      a.t2 = true;
    else
      throw UsageError("unknown modality '" + item + "' (expected t1 or t2)");
  }
  if (!a.any()) throw UsageError("no modality selected");
  return a;
}

std::string modality_string(Availability a) {
  return a.t1 && a.t2 ? "t1,t2" : a.t1 ? "t1" : "t2";
}

std::vector<MultiModalSample> read_labeled(const fs::path& dir, std::vector<std::string>* ids = nullptr) {
  std::vector<MultiModalSample> out;
  for (const auto& id : list_samples(dir)) {
    bool has_gt = false;
    out.push_back(read_sample(dir, id, &has_gt));
    if (!has_gt) throw DataError("sample '" + id + "' in " + dir.string() + " has no reference labels");
    if (ids) ids->push_back(id);
  }
  if (out.empty()) throw DataError("no samples in " + dir.string());
  return out;
}

TrainConfig train_config(const Args& a, const json& rest, const std::string& command) {
  json j = rest;
  for (const char* k : {"preset", "seed", "fusion", "transition"})
    if (j.contains(k)) throw ConfigError("config key '" + std::string(k) + "' conflicts with its flag form");
  j["preset"] = a.preset;
  j["seed"] = a.seed;
  if (command == "train") {
    j["fusion"] = a.fusion;
    j["transition"] = a.transition;
  }
  if (a.epochs > 0) {
    if (!j.contains("schedule")) j["schedule"] = json::object();
    j["schedule"]["epochs"] = a.epochs;
    if (!j["schedule"].contains("lr_drop_epoch")) {
      const TrainSchedule base = a.preset == "paper" ? TrainSchedule::paper() : TrainSchedule::desk();
      j["schedule"]["lr_drop_epoch"] = a.epochs * base.lr_drop_epoch / base.epochs;
    }
  }
  if (a.preset == "paper") std::cerr << kPaperWarning;
  return train_config_from_json(j.dump());
}

void print_epoch(const std::string& tag, Plane p, const EpochRecord& r) {
  std::fprintf(stderr, "%s%s epoch %zu loss %.5f w_t1 %.4f w_t2 %.4f lr %.5g\n", tag.c_str(),
               to_string(p), r.epoch, r.loss, r.w_t1, r.w_t2, r.lr);
}

int cmd_phantom(const Args& a) {
  PhantomSpec spec = PhantomSpec::desk(a.voxel_mm, a.extent);
  const Availability keep = a.modalities.empty() ? Availability{} : parse_modalities(a.modalities);
  const fs::path out = a.out;
  fs::create_directories(out);
  auto write = [&](const std::string& id, const MultiModalSample& s) {
    write_sample(out, id, s.restricted(keep));
  };
  char buf[64];
  if (a.cohort) {
    EffectSpec effect;
    effect.beta_age = a.beta_age;
    effect.beta_sex = a.beta_sex;
    effect.beta_etiv = a.beta_etiv;
    effect.noise_sd = a.noise_sd;
    const auto subjects = generate_cohort(a.count, effect, spec, a.seed);
    std::vector<CohortEntry> cohort;
    std::ofstream truth(out / "true_volumes.csv");
    truth.precision(12);
    truth << "id,true_volume_mm3\n";
    for (const auto& s : subjects) {
      write(s.record.id, s.sample);
      cohort.push_back({s.record, "v1"});
      truth << s.record.id << ',' << s.true_volume_mm3 << '\n';
    }
    write_cohort_csv(out / "cohort.csv", cohort);
  } else {
    for (std::size_t i = 0; i < a.count; ++i) {
      std::snprintf(buf, sizeof buf, "%s_%03zu", a.prefix.c_str(), i);
      write(buf, generate_phantom(spec, mix_seed(a.seed, i)));
    }
  }
  std::cout << "wrote " << a.count << " samples to " << out.string() << '\n';
  return 0;
}

int cmd_train(const Args& a, const json& rest) {
  const TrainConfig cfg = train_config(a, rest, "train");
  const LabelScheme scheme = scheme_by_name(a.scheme);
  const auto data = read_labeled(a.data);
  HMVINN<float> model(scheme, cfg.network(scheme.class_count()), cfg.options.seed);
  TrainOptions opt = cfg.options;
  opt.on_epoch = [](Plane p, const EpochRecord& r) { print_epoch("", p, r); };
  const auto histories = train_model(model, data, opt);
  ModelDescription desc;
  desc.scheme = a.scheme;
  desc.base = cfg.network(scheme.class_count());
  save_checkpoint(a.out, desc, model);
  const fs::path hist = a.history.empty() ? fs::path(a.out + ".history.csv") : fs::path(a.history);
  std::ofstream h(hist);
  if (!h) throw IoError("cannot open " + hist.string() + " for writing");
  h.precision(10);
  h << "plane,epoch,loss,w_t1,w_t2,lr\n";
  for (Plane p : {Plane::axial, Plane::coronal, Plane::sagittal})
    for (const auto& r : histories[static_cast<std::size_t>(p)].epochs)
      h << to_string(p) << ',' << r.epoch << ',' << r.loss << ',' << r.w_t1 << ',' << r.w_t2 << ','
        << r.lr << '\n';
  std::cout << "wrote " << a.out << " and " << hist.string() << '\n';
  return 0;
}

int cmd_segment(const Args& a) {
  ModelDescription desc;
  auto model = load_checkpoint<float>(a.model, &desc);
  const std::string checksum = file_checksum(a.model);
  const fs::path out = a.out;
  fs::create_directories(out);
  std::vector<std::string> ids = a.id.empty() ? list_samples(a.data) : std::vector<std::string>{a.id};
  if (ids.empty()) throw DataError("no samples in " + a.data);
  for (const auto& id : ids) {
    const MultiModalSample s = read_sample(a.data, id);
    EvaluationOptions opt;
    if (!a.modalities.empty()) opt.use = parse_modalities(a.modalities);
    if (a.resample_mm > 0) opt.resample_mm = a.resample_mm;
    const Availability use = opt.use.value_or(s.availability());
    const Segmentation seg = segment_with(model, s, opt);
    const fs::path stem = out / (id + "_seg");
    write_mvol(seg.labels, fs::path(stem.string() + ".mvol"));
    if (a.probabilities) write_probability_stack(seg.probabilities, stem);
    SegmentationSidecar meta;
    meta.modalities = use;
    meta.voxel_size_mm = seg.labels.voxel_size_mm;
    meta.dims = seg.labels.dims;
    meta.model_checksum = checksum;
    write_sidecar(fs::path(stem.string() + ".json"), meta);
    std::cout << id << ": segmented with " << modality_string(use) << '\n';
  }
  return 0;
}

int cmd_evaluate(const Args& a) {
  const LabelScheme scheme = scheme_by_name(a.scheme);
  const auto pooling =
      a.pooling == "pooled" ? RegionPooling::pooled_voxels : RegionPooling::mean_of_structures;
  const MetricReport r =
      evaluate_report(read_mvol_labels(a.pred), read_mvol_labels(a.gt), scheme, pooling);
  r.write_csv(a.out);
  std::cout << r.to_csv();
  return 0;
}

std::vector<double> segmentation_volumes(const fs::path& dir, const std::string& id,
                                         const LabelScheme& scheme, bool pv) {
  if (pv) return structure_volumes(read_probability_stack(dir / (id + "_seg"), scheme.class_count()), true);
  return structure_volumes(read_mvol_labels(dir / (id + "_seg.mvol")), scheme.class_count());
}

std::vector<std::string> segmented_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<std::string> ids;
  const std::string suffix = "_seg.mvol";
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (n.size() > suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.push_back(n.substr(0, n.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

int cmd_retest(const Args& a) {
  const LabelScheme scheme = scheme_by_name(a.scheme);
  std::vector<RetestPair> pairs;
  for (const auto& id : segmented_ids(a.first)) {
    if (!fs::exists(fs::path(a.second) / (id + "_seg.mvol")))
      throw DataError("no repeat segmentation for '" + id + "' in " + a.second);
    pairs.push_back({segmentation_volumes(a.first, id, scheme, a.pv),
                     segmentation_volumes(a.second, id, scheme, a.pv)});
  }
  const auto rows = test_retest(pairs, retest_groups(scheme));
  write_retest_csv(a.out, rows);
  for (const auto& r : rows)
    std::printf("%-16s ICC %.4f [%.4f, %.4f]  VS %.4f\n", r.name.c_str(), r.icc.estimate,
                r.icc.ci_low, r.icc.ci_high, r.mean_vs);
  return 0;
}

int cmd_associate(const Args& a) {
  const auto cohort = read_cohort_csv(a.cohort_csv);
  std::vector<std::string> ids;
  for (const auto& e : cohort) ids.push_back(e.record.id);
  std::vector<double> volumes;
  if (!a.volumes.empty()) {
    volumes = read_volume_csv(a.volumes).column_for(a.structure, ids);
  } else if (!a.segmentations.empty()) {
    const LabelScheme scheme = scheme_by_name(a.scheme);
    std::vector<std::vector<double>> rows;
    for (const auto& id : ids) rows.push_back(segmentation_volumes(a.segmentations, id, scheme, a.pv));
    volumes = volume_table(scheme, ids, rows).column_for(a.structure, ids);
  } else {
    throw UsageError("associate needs --volumes or --segmentations");
  }
  const RegressionResult r = association(volumes, cohort);
  write_regression_csv(a.out, r);
  std::printf("n = %zu, r^2 = %.4f\n", r.n, r.r_squared);
  for (const auto& c : r.coefficients)
    std::printf("%-12s beta %12.5g  se %10.4g  p %.4g\n", c.covariate.c_str(), c.beta, c.std_error,
                c.p_value);
  return 0;
}

int cmd_ablate(const Args& a, const json& rest) {
  const TrainConfig cfg = train_config(a, rest, "ablate-fusion");
  const LabelScheme scheme = scheme_by_name(a.scheme);
  const auto train = read_labeled(a.data);
  const auto test = read_labeled(a.test);
  const auto rows = ablate_fusion(train, test, scheme, cfg, [](FusionMode m, Plane p, const EpochRecord& r) {
    print_epoch(std::string(to_string(m)) + " ", p, r);
  });
  write_ablation_csv(a.out, rows);
  std::printf("%-12s %8s %8s %10s\n", "fusion", "dice", "vs", "hd95_mm");
  for (const auto& r : rows)
    std::printf("%-12s %8.4f %8.4f %10.4f\n", to_string(r.fusion), r.scores.dice, r.scores.vs,
                r.scores.hd95_mm);
  return 0;
}

int cmd_gradcheck(const Args& a) {
  GradSuiteOptions opt;
  opt.seeds = a.seeds;
  opt.eps = a.eps;
  std::map<std::string, GradCheckResult> worst;
  bool ok = true;
  opt.on_result = [&](const GradCheckResult& r) {
    auto& w = worst[r.name];
    if (r.max_rel_error >= w.max_rel_error) w = r;
    ok = ok && r.passed();
  };
  const auto results = run_gradient_suite(opt);
  for (const auto& name : gradient_case_names()) {
    const auto& w = worst[name];
    std::printf("%-20s max rel err %.3e (seed %llu)%s\n", name.c_str(), w.max_rel_error,
                static_cast<unsigned long long>(w.seed), w.passed() ? "" : "  FAIL");
  }
  std::printf("%zu checks, tolerance %.0e\n", results.size(), kGradTolerance);
  if (!ok) throw NumericalError("gradient check failed");
  return 0;
}

int run(Cli& cli, const std::string& name, const json& rest) {
  const Args& a = cli.a;
  set_thread_limit(a.threads);
  if (name == "train") return cmd_train(a, rest);
  if (name == "ablate-fusion") return cmd_ablate(a, rest);
  reject_extra_config(rest, name);
  if (name == "phantom") return cmd_phantom(a);
  if (name == "segment") return cmd_segment(a);
  if (name == "evaluate") return cmd_evaluate(a);
  if (name == "retest") return cmd_retest(a);
  if (name == "associate") return cmd_associate(a);
  return cmd_gradcheck(a);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    auto cli = std::make_unique<Cli>();
    json rest = json::object();
    try {
      std::vector<std::string> rev(args.rbegin(), args.rend());
      cli->app.parse(rev);
      if (!cli->a.config.empty()) {
        rest = apply_config(*cli, args);
        cli = std::make_unique<Cli>();
        std::vector<std::string> again(args.rbegin(), args.rend());
        cli->app.parse(again);
      }
    } catch (const CLI::ParseError& e) {
      const int code = cli->app.exit(e);
      return code == 0 ? 0 : 1;
    }
    return run(*cli, cli->active()->get_name(), rest);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error (io): " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
