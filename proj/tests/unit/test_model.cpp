#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "hypkit/checkpoint.hpp"
#include "hypkit/errors.hpp"
#include "hypkit/model.hpp"
#include "hypkit/phantom.hpp"

using namespace hypkit;
namespace fs = std::filesystem;
using TD = Tensor<double>;

namespace {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::from_data(std::move(shape), std::move(v), grad);
}

PlaneNetConfig tiny_config(std::size_t classes = 4) {
  PlaneNetConfig c = PlaneNetConfig::desk(Plane::axial, classes);
  c.slice_thickness = 3;
  c.first_width = 4;
  c.inner_width = 6;
  c.levels = 2;
  return c;
}

MultiModalSample small_phantom(std::uint64_t seed = 1, double voxel = 0.8) {
  return generate_phantom(PhantomSpec::desk(voxel, 24), seed);
}

}  // namespace

TEST_CASE("fusion of ones and zeros with equal weights") {
  auto w = FusionWeights<double>::create(FusionMode::global, 2);
  TD out = fuse_modalities(TD::full({1, 2, 3, 3}, 1.0), TD::zeros({1, 2, 3, 3}), w);
  for (double v : out.data()) CHECK(v == 0.5);
}

TEST_CASE("fusion passes the present branch through unchanged") {
  for (auto mode : {FusionMode::global, FusionMode::per_channel}) {
    auto w = FusionWeights<double>::create(mode, 3);
    w.w_t1.data()[0] = 0.37;
    TD f1 = random_tensor({2, 3, 4, 4}, 1);
    TD f2 = random_tensor({2, 3, 4, 4}, 2);
    TD only1 = fuse_modalities(f1, TD(), w);
    TD only2 = fuse_modalities(TD(), f2, w);
    for (std::size_t i = 0; i < f1.numel(); ++i) {
      CHECK(only1.data()[i] == f1.data()[i]);
      CHECK(only2.data()[i] == f2.data()[i]);
    }
  }
  auto w = FusionWeights<double>::create(FusionMode::global, 3);
  CHECK_THROWS_AS(fuse_modalities(TD(), TD(), w), UsageError);
}

TEST_CASE("fusion coefficients use absolute weights and sum to one") {
  auto w = FusionWeights<double>::create(FusionMode::global, 1);
  w.w_t1.data()[0] = -0.75;
  w.w_t2.data()[0] = 0.25;
  auto [a, b] = w.effective({true, true});
  CHECK(a[0] == doctest::Approx(0.75));
  CHECK(b[0] == doctest::Approx(0.25));
  auto [c, d] = w.effective({true, false});
  CHECK(c[0] == 1.0);
  CHECK(d[0] == 0.0);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  auto pc = FusionWeights<double>::create(FusionMode::per_channel, 16);
  for (int trial = 0; trial < 100; ++trial) {
    for (std::size_t i = 0; i < 16; ++i) {
      pc.w_t1.data()[i] = u(rng);
      pc.w_t2.data()[i] = u(rng);
    }
    auto [x, y] = pc.effective({true, true});
    for (std::size_t i = 0; i < 16; ++i) CHECK(x[i] + y[i] == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("routed fusion mixes rows per output sample") {
  auto w = FusionWeights<double>::create(FusionMode::global, 2);
  TD f1 = random_tensor({2, 2, 3, 3}, 4);
  TD f2 = random_tensor({1, 2, 3, 3}, 5);
  std::vector<FusionRoute> routes = {{0, 0}, {1, -1}, {-1, 0}};
  TD out = fuse_modalities_routed(f1, f2, w, routes);
  REQUIRE(out.shape() == Shape{3, 2, 3, 3});
  const std::size_t per = 18;
  for (std::size_t i = 0; i < per; ++i) {
    CHECK(out.data()[i] == doctest::Approx(0.5 * f1.data()[i] + 0.5 * f2.data()[i]));
    CHECK(out.data()[per + i] == f1.data()[per + i]);
    CHECK(out.data()[2 * per + i] == f2.data()[i]);
  }
}

TEST_CASE("dense block preserves shape") {
  std::mt19937_64 rng(1);
  CompetitiveDenseBlock<float> b({CDBVariant::standard, 80}, rng);
  auto x = random_tensor<float>({1, 80, 16, 16}, 6);
  CHECK(b.forward(x, true).shape() == x.shape());
  CHECK_THROWS_AS(b.forward(random_tensor<float>({1, 8, 4, 4}, 1), true), ShapeError);
}

TEST_CASE("input variant normalizes before the first convolution") {
  std::mt19937_64 rng(2);
  CompetitiveDenseBlock<double> b({CDBVariant::input_variant, 4}, rng);
  TD x = TD::full({2, 4, 5, 5}, 3.0);
  b.forward(x, true);
  CHECK(b.input_bn.running_initialized);
  TD pre = batchnorm2d(x, b.input_bn, true);
  for (double v : pre.data()) CHECK(std::abs(v) < 1e-2);

  CompetitiveDenseBlock<double> s({CDBVariant::standard, 4}, rng);
  s.forward(x, true);
  CHECK_FALSE(s.input_bn.running_initialized);
}

TEST_CASE("suppressed stages lose the competition") {
  std::mt19937_64 rng(3);
  CompetitiveDenseBlock<double> b({CDBVariant::standard, 3}, rng);
  for (auto& bn : b.bn) {
    bn.gamma = TD::zeros({3});
    bn.beta = TD::full({3}, -1e6);
  }
  TD x = random_tensor({2, 3, 6, 6}, 7);
  TD y = b.forward(x, true);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  // Only the last stage suppressed: the output equals the three-stage map.
  std::mt19937_64 r1(4), r2(4);
  CompetitiveDenseBlock<double> full({CDBVariant::standard, 3}, r1);
  CompetitiveDenseBlock<double> cut({CDBVariant::standard, 3}, r2);
  cut.bn[3].gamma = TD::zeros({3});
  cut.bn[3].beta = TD::full({3}, -1e6);
  TD yc = cut.forward(x, true);
  TD running = x;
  for (std::size_t i = 0; i < 3; ++i)
    running = maximum(running, batchnorm2d(conv2d(prelu(running, full.slope[i]), full.weight[i], full.bias[i]),
                                           full.bn[i], true));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(yc.data()[i] == running.data()[i]);
}

TEST_CASE("resolution normalization extents") {
  TD f = random_tensor({1, 2, 100, 100}, 8);
  TD same = resolution_normalize(f, 1.0);
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(same.data()[i] == f.data()[i]);
  TD n = resolution_normalize(f, 0.8);
  CHECK(n.dim(2) == 80);
  CHECK(n.dim(3) == 80);
  TD j = resolution_normalize(random_tensor({1, 1, 50, 40}, 9), 1.0, 1.0, 0.8);
  CHECK(j.dim(2) == 40);
  CHECK(j.dim(3) == 32);
}

TEST_CASE("normalize then denormalize restores the native extent") {
  for (std::size_t h : {96u, 100u, 125u})
    for (std::size_t w : {96u, 100u, 125u}) {
      TD f = random_tensor({1, 1, h, w}, h * w);
      TD r = resolution_denormalize(resolution_normalize(f, 0.8), {h, w});
      CHECK(r.dim(2) == h);
      CHECK(r.dim(3) == w);
    }
}

TEST_CASE("slice geometry per plane") {
  const Dims3 d{5, 6, 7};
  CHECK(slice_count(d, Plane::axial) == 7);
  CHECK(slice_count(d, Plane::coronal) == 6);
  CHECK(slice_count(d, Plane::sagittal) == 5);
  CHECK(slice_extent(d, Plane::axial) == std::pair<std::size_t, std::size_t>{6, 5});
  CHECK(slice_extent(d, Plane::sagittal) == std::pair<std::size_t, std::size_t>{7, 6});
  CHECK(voxel_index(d, Plane::coronal, 2, 3, 4) == d.index(4, 2, 3));
  CHECK(voxel_index(d, Plane::sagittal, 1, 3, 4) == d.index(1, 4, 3));
}

TEST_CASE("slice stacks pad outside the volume with zeros") {
  auto v = Volume3D::create({3, 3, 3}, 1.0, 1.0f);
  std::vector<float> out(5 * 9, -1.0f);
  extract_slice_stack<float>(v, Plane::axial, {0, 5}, out.data());
  for (std::size_t s = 0; s < 5; ++s)
    for (std::size_t i = 0; i < 9; ++i) CHECK(out[s * 9 + i] == (s < 2 ? 0.0f : 1.0f));
}

TEST_CASE("plane network output matches the input slice extent") {
  for (double voxel : {0.8, 1.0}) {
    PlaneNet<float> net(tiny_config(), 1);
    const auto s = small_phantom(2, voxel);
    auto in = make_plane_input<float>(s, Plane::axial, 3, 4, 2, {true, true});
    auto out = net.forward(in, {true, 1.0});
    CHECK(out.shape() == Shape{2, 4, 24, 24});
    auto fixed_cfg = tiny_config();
    fixed_cfg.transition = ScaleTransition::fixed_pooling;
    PlaneNet<float> fixed(fixed_cfg, 1);
    CHECK(fixed.forward(in, {true, 1.0}).shape() == Shape{2, 4, 24, 24});
  }
}

TEST_CASE("T1-only inference equals both modalities with a zero T2 weight") {
  for (auto mode : {FusionMode::global, FusionMode::per_channel}) {
    auto cfg = tiny_config();
    cfg.fusion = mode;
    PlaneNet<float> net(cfg, 5);
    const auto s = small_phantom(3);
    net.forward(make_plane_input<float>(s, Plane::axial, 3, 0, 8, {true, true}), {true, 1.0});
    auto t1 = net.forward(make_plane_input<float>(s, Plane::axial, 3, 8, 4, {true, false}));
    for (auto& v : net.fusion().w_t2.data()) v = 0.0f;
    auto both = net.forward(make_plane_input<float>(s, Plane::axial, 3, 8, 4, {true, true}));
    REQUIRE(t1.shape() == both.shape());
    CHECK(std::memcmp(t1.data().data(), both.data().data(), t1.numel() * sizeof(float)) == 0);
  }
}

TEST_CASE("loss gradient reaches the fusion weight") {
  PlaneNet<double> net(tiny_config(), 6);
  const auto s = small_phantom(4);
  auto in = make_plane_input<double>(s, Plane::axial, 3, 10, 2, {true, true});
  TD proj = random_tensor({2, 4, 24, 24}, 10);
  backward(sum(mul(net.forward(in, {true, 1.0}), proj)));
  CHECK(std::abs(net.fusion().w_t1.grad()[0]) > 0.0);
}

TEST_CASE("paper preset parameter count is close to 2.6M") {
  PlaneNet<float> net(PlaneNetConfig::paper(Plane::axial, 25), 1);
  const double n = static_cast<double>(net.parameter_count());
  CHECK(std::abs(n - 2.6e6) / 2.6e6 <= 0.10);
}

TEST_CASE("invalid network configurations") {
  auto c = tiny_config();
  c.slice_thickness = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.class_count = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(fusion_mode_from_string("mean"), ConfigError);
  CHECK(scale_transition_from_string("fixed_pooling") == ScaleTransition::fixed_pooling);
  CHECK(plane_from_string("coronal") == Plane::coronal);
}

TEST_CASE("HMVINN sizes the sagittal network for unified classes") {
  HMVINN<float> m(LabelScheme::phantom4(), tiny_config(), 1);
  CHECK(m.plane(Plane::axial).config().class_count == 4);
  CHECK(m.plane(Plane::sagittal).config().class_count == 3);
  CHECK(m.view_weights() == std::array<double, 3>{0.4, 0.4, 0.2});
}

TEST_CASE("checkpoint round trip restores every tensor") {
  const fs::path dir = fs::temp_directory_path() / "hypkit_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ModelDescription d;
  d.base = tiny_config();
  d.base.fusion = FusionMode::per_channel;
  HMVINN<float> m(LabelScheme::phantom4(), d.base, 9);
  for (Plane p : {Plane::axial, Plane::coronal, Plane::sagittal}) m.plane(p).reset_running_stats();
  m.plane(Plane::axial).fusion().w_t1.data()[1] = 0.123f;
  save_checkpoint(dir / "m.ckpt", d, m);
  ModelDescription back;
  auto r = load_checkpoint<float>(dir / "m.ckpt", &back);
  CHECK(back.base.fusion == FusionMode::per_channel);
  CHECK(back.base.levels == 2);
  for (Plane p : {Plane::axial, Plane::coronal, Plane::sagittal}) {
    auto a = m.plane(p).parameters();
    auto b = r.plane(p).parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == b[i].name);
      CHECK(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.data().begin()));
    }
    auto ba = m.plane(p).batchnorms();
    auto bb = r.plane(p).batchnorms();
    for (std::size_t i = 0; i < ba.size(); ++i) CHECK(ba[i].params->running_var == bb[i].params->running_var);
  }
  CHECK(file_checksum(dir / "m.ckpt").size() == 16);

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "junk.ckpt"), FormatError);
  CHECK(parse_description(describe_json(d)).base.inner_width == d.base.inner_width);
}
