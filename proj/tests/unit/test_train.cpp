#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "hypkit/errors.hpp"
#include "hypkit/gradcheck.hpp"
#include "hypkit/phantom.hpp"
#include "hypkit/train.hpp"

using namespace hypkit;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return TD::from_data(std::move(shape), std::move(v), grad);
}

PlaneNetConfig tiny_config() {
  PlaneNetConfig c = PlaneNetConfig::desk(Plane::axial, 4);
  c.slice_thickness = 3;
  c.first_width = 4;
  c.inner_width = 6;
  c.levels = 2;
  return c;
}

}  // namespace

TEST_CASE("median frequency weights") {
  auto w = median_frequency_weights(std::vector<double>{0.5, 0.25, 0.25});
  CHECK(w == std::vector<double>{0.5, 1.0, 1.0});
  for (double x : median_frequency_weights(std::vector<double>{0.25, 0.25, 0.25, 0.25})) CHECK(x == 1.0);
  auto v = median_frequency_weights(std::vector<double>{0.7, 0.2, 0.1});
  CHECK(v[0] == doctest::Approx(2.0 / 7.0));
  CHECK(v[1] == doctest::Approx(1.0));
  CHECK(v[2] == doctest::Approx(2.0));
  CHECK_THROWS_AS(median_frequency_weights(std::vector<double>{0.5, 0.5, 0.0}), ConfigError);
  CHECK_THROWS_AS(median_frequency_weights(std::vector<double>{0.5, 0.6}), ConfigError);
}

TEST_CASE("combined loss saturates on confident correct logits") {
  std::vector<std::uint16_t> target = {0, 1, 2, 1};
  std::vector<double> logits(3 * 4, 0.0);
  for (std::size_t v = 0; v < 4; ++v) logits[target[v] * 4 + v] = 20.0;
  TD z = TD::from_data({1, 3, 2, 2}, logits);
  std::vector<double> w = {1.0, 1.0, 1.0};
  CHECK(combined_loss(z, target, w).item() < 1e-3);
}

TEST_CASE("uniform logits give ln 2 cross-entropy for two classes") {
  std::vector<std::uint16_t> target = {0, 1, 1, 0, 1, 0};
  TD z = TD::zeros({1, 2, 2, 3});
  std::vector<double> w = {0.3, 2.0};
  LossConfig ce_only{1.0, 0.0, 1e-6};
  CHECK(combined_loss(z, target, w, ce_only).item() == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
}

TEST_CASE("combined loss gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TD z = random_tensor({2, 3, 4, 4}, seed, true);
    std::mt19937_64 rng(seed);
    std::vector<std::uint16_t> target(32);
    for (auto& t : target) t = static_cast<std::uint16_t>(rng() % 3);
    std::vector<double> w = {0.5, 1.0, 2.0};
    backward(combined_loss(z, target, w));
    std::function<double(TD&)> f = [&](TD& x) { return combined_loss(x, target, w).item(); };
    TD fd = finite_diff_grad(f, z, 1e-6);
    CHECK(relative_error<double>(z.grad(), fd.data()) < 1e-4);
  }
}

TEST_CASE("combined loss rejects labels beyond the logit channels") {
  std::vector<std::uint16_t> target = {0, 3, 1, 1};
  std::vector<double> w = {1, 1, 1};
  CHECK_THROWS_AS(combined_loss(TD::zeros({1, 3, 2, 2}), target, w), ShapeError);
}

TEST_CASE("modality dropout schedule") {
  std::mt19937_64 rng(1);
  for (std::size_t e = 0; e < 10; ++e)
    for (int i = 0; i < 100; ++i) CHECK(sample_modality_mask(e, 10, rng) == Availability{true, true});
  int both = 0, t1 = 0, t2 = 0;
  const int draws = 30000;
  for (int i = 0; i < draws; ++i) {
    auto m = sample_modality_mask(10 + i % 5, 10, rng);
    REQUIRE(m.any());
    both += m.t1 && m.t2;
    t1 += m.t1 && !m.t2;
    t2 += !m.t1 && m.t2;
  }
  for (int c : {both, t1, t2}) CHECK(std::abs(c / double(draws) - 1.0 / 3.0) <= 0.01);
}

TEST_CASE("identity affine returns the sample unchanged") {
  const auto s = generate_phantom(PhantomSpec::desk(0.8, 24), 1);
  const auto r = apply_affine(s, AffineParams{});
  CHECK(r.t1()->data == s.t1()->data);
  CHECK(r.gt().labels == s.gt().labels);
}

TEST_CASE("integer-voxel translation moves an impulse exactly") {
  auto v = Volume3D::create({9, 9, 9}, 0.8);
  auto gt = LabelMap3D::create({9, 9, 9}, 0.8);
  v.at(3, 4, 5) = 1.0f;
  gt.at(3, 4, 5) = 2;
  MultiModalSample s(v, std::nullopt, gt);
  AffineParams p;
  p.translation_mm = {2 * 0.8, -1 * 0.8, 0.0};
  const auto r = apply_affine(s, p);
  for (std::size_t k = 0; k < 9; ++k)
    for (std::size_t j = 0; j < 9; ++j)
      for (std::size_t i = 0; i < 9; ++i) {
        const bool hit = i == 5 && j == 3 && k == 5;
        CHECK(r.t1()->at(i, j, k) == (hit ? 1.0f : 0.0f));
        CHECK(r.gt().at(i, j, k) == (hit ? 2 : 0));
      }
}

TEST_CASE("augmented labels come from the original label set") {
  const auto s = generate_phantom(PhantomSpec::desk(0.8, 24), 2);
  std::set<std::uint16_t> before(s.gt().labels.begin(), s.gt().labels.end());
  std::mt19937_64 rng(3);
  AugmentationConfig cfg;
  cfg.affine_probability = 1.0;
  for (int draw = 0; draw < 100; ++draw) {
    const auto r = apply_affine(s, draw_affine(rng, cfg));
    for (auto l : std::set<std::uint16_t>(r.gt().labels.begin(), r.gt().labels.end()))
      CHECK(before.count(l) == 1);
  }
}

TEST_CASE("bias field with zero coefficients is identity") {
  const auto v = generate_phantom(PhantomSpec::desk(0.8, 24), 1).t1().value();
  std::vector<double> zero(bias_coefficient_count(3), 0.0);
  CHECK(zero.size() == 20);
  for (float f : bias_field(v.dims, zero, 3)) CHECK(f == 1.0f);
  CHECK(apply_bias_field(v, zero, 3).data == v.data);
}

TEST_CASE("bias fields are positive and finite") {
  std::mt19937_64 rng(5);
  AugmentationConfig cfg;
  std::uniform_real_distribution<double> u(-cfg.bias_coeff, cfg.bias_coeff);
  const Dims3 d{6, 5, 4};
  for (int draw = 0; draw < 1000; ++draw) {
    std::vector<double> c(bias_coefficient_count(3));
    for (auto& x : c) x = u(rng);
    for (float f : bias_field(d, c, 3)) CHECK((std::isfinite(f) && f > 0.0f));
  }
  for (double bound : {cfg.bias_coeff, -cfg.bias_coeff}) {
    std::vector<double> c(bias_coefficient_count(3), bound);
    for (float f : bias_field(d, c, 3)) CHECK((std::isfinite(f) && f > 0.0f));
  }
}

TEST_CASE("internal scale jitter") {
  PlaneNet<double> net(tiny_config(), 1);
  const auto s = generate_phantom(PhantomSpec::desk(1.0, 20), 1);
  auto in = make_plane_input<double>(s, Plane::axial, 3, 5, 2, {true, true});
  // Identical BN state for both training calls.
  PlaneNet<double> twin(tiny_config(), 1);
  TD a = net.forward(in, {true, 1.0});
  TD b = twin.forward(in, {true});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  CHECK(resolution_normalize(TD::zeros({1, 1, 20, 20}), 1.0, 1.0, 0.8).dim(2) == 16);

  std::mt19937_64 rng(2);
  AugmentationConfig cfg;
  for (int i = 0; i < 100; ++i) {
    const double j = draw_internal_scale(rng, cfg);
    CHECK(j >= 0.8);
    CHECK(j <= 1.2);
  }
}

TEST_CASE("eval output ignores the jitter setting") {
  PlaneNet<double> net(tiny_config(), 2);
  const auto s = generate_phantom(PhantomSpec::desk(0.8, 24), 3);
  auto in = make_plane_input<double>(s, Plane::axial, 3, 6, 2, {true, true});
  for (double j : {0.8, 1.2, 0.93}) net.forward(in, {true, j});
  TD a = net.forward(in, {false, 1.0});
  TD b = net.forward(in, {false, 0.8});
  TD c = net.forward(in, {false, 1.0});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  CHECK(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST_CASE("AdamW decoupled weight decay with a zero gradient") {
  TD p = TD::from_data({3}, {1.0, -2.0, 0.5}, true);
  p.zero_grad();
  std::vector<TD> params = {p};
  AdamWState st;
  adamw_step<double>(params, st, 0.1, 1e-4);
  CHECK(p.data()[0] == doctest::Approx(1.0 * (1 - 0.1 * 1e-4)).epsilon(1e-15));
  CHECK(p.data()[1] == doctest::Approx(-2.0 * (1 - 0.1 * 1e-4)).epsilon(1e-15));
}

TEST_CASE("AdamW single step closed form") {
  TD p = TD::from_data({1}, {0.3}, true);
  p.grad()[0] = 1.0;
  std::vector<TD> params = {p};
  AdamWState st;
  const double lr = 0.01, wd = 0.1, eps = 1e-8;
  adamw_step<double>(params, st, lr, wd);
  // m_hat = g, v_hat = g^2 after bias correction.
  CHECK(p.data()[0] == doctest::Approx(0.3 - lr * wd * 0.3 - lr * 1.0 / (1.0 + eps)).epsilon(1e-15));
}

TEST_CASE("AdamW without decay follows the Adam recurrence") {
  TD p = TD::from_data({2}, {0.5, -0.25}, true);
  std::vector<TD> params = {p};
  AdamWState st;
  double ref[2] = {0.5, -0.25}, m[2] = {0, 0}, v[2] = {0, 0};
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (int t = 1; t <= 10; ++t) {
    double g[2] = {n(rng), n(rng)};
    p.grad()[0] = g[0];
    p.grad()[1] = g[1];
    adamw_step<double>(params, st, 0.05, 0.0);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  CHECK(p.data()[0] == doctest::Approx(ref[0]).epsilon(1e-12));
  CHECK(p.data()[1] == doctest::Approx(ref[1]).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule steps down once") {
  const auto s = TrainSchedule::desk();
  CHECK(s.lr_at(0) == s.lr_initial);
  CHECK(s.lr_at(s.lr_drop_epoch - 1) == s.lr_initial);
  CHECK(s.lr_at(s.lr_drop_epoch) == s.lr_final);
}

TEST_CASE("a tiny network overfits one phantom slice") {
  auto cfg = tiny_config();
  PlaneNet<double> net(cfg, 3);
  const auto s = generate_phantom(PhantomSpec::desk(0.8, 24), 4).intensity_normalized();
  const std::size_t slice = 9;
  auto in = make_plane_input<double>(s, Plane::axial, 3, slice, 1, {true, true});
  const auto target = extract_label_slice(s.gt(), Plane::axial, slice);
  std::vector<double> w = {1, 1, 1, 1};
  std::vector<TD> params;
  for (auto& p : net.parameters()) params.push_back(p.tensor);
  AdamWState st;
  double loss = 1e9;
  for (int step = 0; step < 200 && loss >= 0.05; ++step) {
    net.zero_grad();
    TD l = combined_loss(net.forward(in, {true, 1.0}), target, w);
    loss = l.item();
    backward(l);
    adamw_step<double>(params, st, 0.01, 0.0);
  }
  CHECK(loss < 0.05);
}

TEST_CASE("training records one history entry per epoch and is deterministic") {
  std::vector<MultiModalSample> data;
  for (std::uint64_t i = 0; i < 2; ++i) data.push_back(generate_phantom(PhantomSpec::desk(0.8, 20), 10 + i));
  TrainOptions opt;
  opt.schedule.epochs = 3;
  opt.schedule.lr_drop_epoch = 2;
  opt.schedule.slices_per_volume = 4;
  opt.schedule.modality_dropout_start = 1;
  opt.seed = 7;
  std::size_t callbacks = 0;
  opt.on_epoch = [&](Plane, const EpochRecord&) { ++callbacks; };
  const auto scheme = LabelScheme::phantom4();
  PlaneNet<float> a(tiny_config(), 1), b(tiny_config(), 1);
  const auto ha = train_plane(a, data, scheme, opt);
  const auto hb = train_plane(b, data, scheme, opt);
  REQUIRE(ha.epochs.size() == 3);
  CHECK(callbacks == 6);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(ha.epochs[e].epoch == e);
    CHECK(ha.epochs[e].loss == hb.epochs[e].loss);
    CHECK(ha.epochs[e].w_t1 == hb.epochs[e].w_t1);
    CHECK(std::isfinite(ha.epochs[e].loss));
  }
  CHECK(ha.epochs[2].lr == opt.schedule.lr_final);
}

TEST_CASE("sagittal training labels unify lateral pairs") {
  const auto s = generate_phantom(PhantomSpec::desk(0.8, 24), 1);
  const auto scheme = LabelScheme::phantom4();
  const auto sag = plane_labels(s.gt(), Plane::sagittal, scheme);
  for (std::size_t v = 0; v < sag.labels.size(); ++v)
    CHECK(sag.labels[v] == scheme.to_sagittal(s.gt().labels[v]));
  CHECK(plane_labels(s.gt(), Plane::axial, scheme).labels == s.gt().labels);
  const auto w = dataset_class_weights({s}, Plane::axial, scheme);
  CHECK(w.size() == 4);
  for (double x : w) CHECK(x > 0);
}

TEST_CASE("training configuration files") {
  auto c = train_config_from_json(R"({"preset":"desk","seed":4,"fusion":"per_channel",
      "transition":"fixed_pooling","schedule":{"epochs":12},"augmentation":{"scale_min":1,"scale_max":1}})");
  CHECK(c.options.seed == 4);
  CHECK(c.options.schedule.epochs == 12);
  CHECK(c.options.schedule.batch == TrainSchedule::desk().batch);
  CHECK(c.fusion == FusionMode::per_channel);
  CHECK(c.network(4).transition == ScaleTransition::fixed_pooling);
  CHECK(c.network(4).first_width == PlaneNetConfig::desk(Plane::axial, 4).first_width);
  auto back = train_config_from_json(train_config_to_json(c));
  CHECK(back.options.augmentation.scale_max == 1.0);
  CHECK(back.transition == ScaleTransition::fixed_pooling);
  CHECK_THROWS_AS(train_config_from_json(R"({"preset":"huge"})"), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(R"({"schedule":{"epoch":3}})"), ConfigError);
  CHECK_THROWS_AS(train_config_from_json("{"), ConfigError);
}
