#include "hypkit/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hypkit/errors.hpp"
#include "hypkit/gradcheck.hpp"
#include "hypkit/model.hpp"
#include "hypkit/ops.hpp"
#include "hypkit/train.hpp"

namespace hypkit {

namespace {

using D = double;

struct Case {
  std::vector<Tensor<D>> inputs;
  std::function<Tensor<D>()> forward;
  // Keeps objects referenced by `forward` alive.
  std::shared_ptr<void> state;
};

Tensor<D> uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<D> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor<D>::from_data(std::move(shape), std::move(v), true);
}

void randomize(Tensor<D>& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : t.data()) x = u(rng);
}

std::vector<Tensor<D>> bn_inputs(BatchNormParams<D>& p, std::mt19937_64& rng) {
  randomize(p.gamma, rng, 0.5, 1.5);
  randomize(p.beta, rng);
  return {p.gamma, p.beta};
}

void add_cdb_inputs(CompetitiveDenseBlock<D>& b, std::vector<Tensor<D>>& in, std::mt19937_64& rng) {
  if (b.config().variant == CDBVariant::input_variant)
    for (auto& t : bn_inputs(b.input_bn, rng)) in.push_back(t);
  for (std::size_t s = 0; s < CompetitiveDenseBlock<D>::kStages; ++s) {
    if (b.slope[s].defined()) {
      randomize(b.slope[s], rng, 0.05, 0.5);
      in.push_back(b.slope[s]);
    }
    in.push_back(b.weight[s]);
    in.push_back(b.bias[s]);
    for (auto& t : bn_inputs(b.bn[s], rng)) in.push_back(t);
  }
}

void randomize_fusion(FusionWeights<D>& w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution neg(0.3);
  for (auto* t : {&w.w_t1, &w.w_t2})
    for (auto& x : t->data()) x = neg(rng) ? -mag(rng) : mag(rng);
}

Case make_case(const std::string& name, std::mt19937_64& rng) {
  Case c;
  if (name == "conv2d") {
    auto x = uniform({2, 3, 6, 5}, rng), w = uniform({4, 3, 3, 3}, rng), b = uniform({4}, rng);
    c.inputs = {x, w, b};
    c.forward = [=] { return conv2d(x, w, b); };
  } else if (name == "prelu_shared" || name == "prelu_channel") {
    auto x = uniform({2, 3, 4, 4}, rng);
    auto s = uniform({name == "prelu_shared" ? std::size_t{1} : std::size_t{3}}, rng, 0.05, 0.5);
    c.inputs = {x, s};
    c.forward = [=] { return prelu(x, s); };
  } else if (name == "batchnorm2d_train" || name == "batchnorm2d_eval") {
    auto p = std::make_shared<BatchNormParams<D>>(BatchNormParams<D>::create(3));
    auto x = uniform({3, 3, 4, 5}, rng);
    c.inputs = {x};
    for (auto& t : bn_inputs(*p, rng)) c.inputs.push_back(t);
    const bool training = name == "batchnorm2d_train";
    if (!training) {
      std::uniform_real_distribution<double> u(-0.5, 0.5), v(0.5, 2.0);
      for (auto& m : p->running_mean) m = u(rng);
      for (auto& m : p->running_var) m = v(rng);
      p->running_initialized = true;
    }
    c.state = p;
    c.forward = [=] { return batchnorm2d(x, *p, training); };
  } else if (name == "maxpool2d") {
    auto x = uniform({2, 3, 5, 7}, rng);
    c.inputs = {x};
    c.forward = [=] { return maxpool2d(x).values; };
  } else if (name == "maxunpool2d") {
    auto x = uniform({2, 3, 5, 7}, rng);
    const auto idx = maxpool2d(x.detach()).indices;
    auto y = uniform({2, 3, idx.out_h, idx.out_w}, rng);
    c.inputs = {y};
    c.forward = [=] { return maxunpool2d(y, idx); };
  } else if (name == "interp2d_up" || name == "interp2d_down") {
    auto x = uniform({2, 2, 5, 6}, rng);
    const double s = name == "interp2d_up" ? 1.6 : 0.7;
    c.inputs = {x};
    c.forward = [=] { return interp2d(x, s); };
  } else if (name == "interp2d_to") {
    auto x = uniform({1, 2, 7, 4}, rng);
    c.inputs = {x};
    c.forward = [=] { return interp2d_to(x, 5, 9); };
  } else if (name == "maximum") {
    auto a = uniform({2, 3, 4, 4}, rng), b = uniform({2, 3, 4, 4}, rng);
    c.inputs = {a, b};
    c.forward = [=] { return maximum(a, b); };
  } else if (name == "elementwise") {
    auto a = uniform({2, 2, 3, 3}, rng), b = uniform({2, 2, 3, 3}, rng);
    c.inputs = {a, b};
    c.forward = [=] { return scale(add(mul(a, b), sub(a, b)), 0.7); };
  } else if (name == "softmax_channels") {
    auto x = uniform({2, 4, 3, 3}, rng);
    c.inputs = {x};
    c.forward = [=] { return softmax_channels(x); };
  } else if (name == "fusion_global" || name == "fusion_per_channel" || name == "fusion_routed") {
    const auto mode = name == "fusion_per_channel" ? FusionMode::per_channel : FusionMode::global;
    auto w = std::make_shared<FusionWeights<D>>(FusionWeights<D>::create(mode, 4));
    randomize_fusion(*w, rng);
    if (name == "fusion_routed") {
      auto f1 = uniform({2, 4, 3, 3}, rng), f2 = uniform({2, 4, 3, 3}, rng);
      const std::vector<FusionRoute> routes = {{0, 0}, {1, -1}, {-1, 1}};
      c.inputs = {f1, f2, w->w_t1, w->w_t2};
      c.forward = [=] { return fuse_modalities_routed(f1, f2, *w, routes); };
    } else {
      auto f1 = uniform({2, 4, 3, 3}, rng), f2 = uniform({2, 4, 3, 3}, rng);
      c.inputs = {f1, f2, w->w_t1, w->w_t2};
      c.forward = [=] { return fuse_modalities(f1, f2, *w); };
    }
    c.state = w;
  } else if (name == "combined_loss") {
    auto x = uniform({2, 4, 5, 5}, rng);
    std::uniform_int_distribution<int> cls(0, 3);
    std::vector<std::uint16_t> target(2 * 5 * 5);
    for (auto& t : target) t = static_cast<std::uint16_t>(cls(rng));
    std::uniform_real_distribution<double> u(0.5, 2.0);
    std::vector<double> weights(4);
    for (auto& w : weights) w = u(rng);
    c.inputs = {x};
    c.forward = [=] { return combined_loss(x, target, weights); };
  } else if (name == "cdb_standard" || name == "cdb_input") {
    const auto variant = name == "cdb_input" ? CDBVariant::input_variant : CDBVariant::standard;
    auto block = std::make_shared<CompetitiveDenseBlock<D>>(CDBConfig{variant, 3}, rng);
    auto x = uniform({2, 3, 5, 4}, rng);
    c.inputs = {x};
    add_cdb_inputs(*block, c.inputs, rng);
    c.state = block;
    c.forward = [=] { return block->forward(x, true); };
  } else if (name == "plane_net") {
    PlaneNetConfig cfg;
    cfg.class_count = 3;
    cfg.slice_thickness = 3;
    cfg.first_width = 3;
    cfg.inner_width = 4;
    cfg.levels = 2;
    auto net = std::make_shared<PlaneNet<D>>(cfg, rng());
    for (const auto& ref : net->parameters()) {
      auto t = ref.tensor;
      if (ref.name.find("prelu") != std::string::npos)
        randomize(t, rng, 0.05, 0.5);
      else if (ref.name.find("gamma") != std::string::npos)
        randomize(t, rng, 0.5, 1.5);
      else if (ref.name.find("fusion") != std::string::npos)
        randomize(t, rng, 0.2, 1.0);
      else if (ref.name.find("beta") != std::string::npos)
        randomize(t, rng, -0.5, 0.5);
      c.inputs.push_back(t);
    }
    PlaneInput<D> in;
    in.t1 = uniform({2, 3, 9, 8}, rng);
    in.t2 = uniform({2, 3, 9, 8}, rng);
    in.routes = {{0, 0}, {1, 1}};
    in.native_voxel_mm = 0.8;
    c.inputs.push_back(in.t1);
    std::uniform_int_distribution<int> cls(0, 2);
    std::vector<std::uint16_t> target(2 * 9 * 8);
    for (auto& t : target) t = static_cast<std::uint16_t>(cls(rng));
    const std::vector<double> weights = {0.5, 1.5, 1.0};
    c.state = net;
    c.forward = [=] {
      return combined_loss(net->forward(in, {true, 1.1}), target, weights);
    };
  } else {
    throw UsageError("unknown gradient case '" + name + "'");
  }
  return c;
}

// Relative error whose denominator never drops below `floor`, so inputs with
// an exactly zero gradient (a conv bias ahead of batch normalization) are
// judged against the case's gradient scale instead of dividing noise by noise.
double floored_relative_error(std::span<const D> a, std::span<const D> b, double floor) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), floor});
  return denom == 0 ? 0.0 : std::sqrt(diff) / denom;
}

double norm(std::span<const D> a) {
  double s = 0;
  for (D v : a) s += v * v;
  return std::sqrt(s);
}

}  // namespace

const std::vector<std::string>& gradient_case_names() {
  static const std::vector<std::string> names = {
      "conv2d",        "prelu_shared",   "prelu_channel",      "batchnorm2d_train",
      "batchnorm2d_eval", "maxpool2d",   "maxunpool2d",        "interp2d_up",
      "interp2d_down", "interp2d_to",    "maximum",            "elementwise",
      "softmax_channels", "fusion_global", "fusion_per_channel", "fusion_routed",
      "combined_loss", "cdb_standard",   "cdb_input",          "plane_net",
  };
  return names;
}

GradCheckResult run_gradient_case(const std::string& name, std::uint64_t seed, double eps) {
  std::mt19937_64 rng(seed);
  Case c = make_case(name, rng);

  const Tensor<D> first = c.forward();
  const Tensor<D> proj = uniform(first.shape(), rng).detach();
  for (auto& t : c.inputs) t.zero_grad();
  backward(sum(mul(first, proj)));
  std::vector<std::vector<D>> analytic;
  for (auto& t : c.inputs) {
    if (!t.has_grad()) throw StateError("gradient case " + name + ": input received no gradient");
    analytic.emplace_back(t.grad().begin(), t.grad().end());
  }

  const std::function<D(Tensor<D>&)> objective = [&](Tensor<D>&) {
    autograd::NoGradGuard guard;
    return sum(mul(c.forward(), proj)).item();
  };
  double scale = 0;
  for (const auto& g : analytic) scale = std::max(scale, norm(g));
  GradCheckResult r;
  r.name = name;
  r.seed = seed;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    auto probe = finite_diff_probe(objective, c.inputs[i], eps, kKinkTolerance);
    auto a = analytic[i];
    auto fd = probe.grad.data();
    // Kinked elements are compared on neither side.
    for (std::size_t k = 0; k < a.size(); ++k)
      if (probe.kink[k]) a[k] = fd[k] = 0;
    r.elements += a.size();
    r.kinks += probe.kink_count;
    r.max_rel_error = std::max(r.max_rel_error, floored_relative_error(a, fd, 1e-3 * scale));
  }
  return r;
}

std::vector<GradCheckResult> run_gradient_suite(const GradSuiteOptions& opt) {
  std::vector<GradCheckResult> out;
  for (const auto& name : gradient_case_names())
    for (std::size_t s = 0; s < opt.seeds; ++s) {
      out.push_back(run_gradient_case(name, opt.first_seed + s, opt.eps));
      if (opt.on_result) opt.on_result(out.back());
    }
  return out;
}

}  // namespace hypkit
