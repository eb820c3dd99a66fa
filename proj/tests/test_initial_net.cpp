#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dropvid/initial_net.hpp"
#include "dropvid/synth.hpp"
#include "test_util.hpp"

using namespace dropvid;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

InitialNetConfig small_cfg() {
  InitialNetConfig c;
  c.width = 8;
  c.attention_width = 4;
  return c;
}

// Training-default adversarial weight.
constexpr double kAdvWeight = 0.01;

// One generator + one discriminator update on a (rain, clean) pair.
void overfit_step(InitialNet& net, Adam& gen_opt, Adam& disc_opt, const Tensor& rain, const Tensor& clean) {
  Var r = Var::constant(rain), c = Var::constant(clean);
  gen_opt.zero_grad();
  Var s = net.restore(r);
  SingleImageLoss l = single_image_loss(c, s, net.discriminate(s), net.perceptual(c), net.perceptual(s), kAdvWeight);
  backward(l.total);
  gen_opt.step(1.0);

  disc_opt.zero_grad();
  Var fake = Var::constant(net.restore(r).value());
  backward(discriminator_loss(net.discriminate(c), net.discriminate(fake)));
  disc_opt.step(1.0);
}

double mean_abs_in(const Tensor& a, const Tensor& b, const Tensor& region) {
  double acc = 0.0, n = 0.0;
  const std::size_t plane = region.size();
  for (int c = 0; c < a.channels(); ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (region[p] > 0.0) {
        acc += std::abs(a[c * plane + p] - b[c * plane + p]);
        n += 1.0;
      }
  return acc / n;
}

}  // namespace

TEST_CASE("untrained net returns its input") {
  InitialNet net(small_cfg());
  std::mt19937_64 rng(201);
  Frame f = make_frame(random_tensor({3, 64, 64}, rng, 0, 1), 4);
  Frame s = restore_single(f, net);
  CHECK(s.time_index == 4);
  CHECK((s.pixels - f.pixels).max_abs() == 0.0);
  Restoration r = net.forward(Var::constant(f.pixels));
  REQUIRE(r.attention.size() == 3);
  for (const Var& a : r.attention) {
    CHECK(a.value().min() >= 0.0);
    CHECK(a.value().max() <= 1.0);
  }
}

TEST_CASE("restore_single rejects frames the network cannot take") {
  InitialNet net(small_cfg());
  CHECK_THROWS_AS(restore_single(make_frame(Tensor(Shape{1, 64, 64}, 0.5)), net), std::invalid_argument);
  CHECK_THROWS_AS(restore_single(make_frame(Tensor(Shape{3, 66, 64}, 0.5)), net), std::invalid_argument);
  InitialNetConfig wide = small_cfg();
  wide.width = 12;
  Archive a;
  InitialNet(wide).save_to(a);
  CHECK_THROWS(net.load_from(a));
}

TEST_CASE("checkpoint round trip restores identical outputs") {
  InitialNet a(small_cfg());
  std::mt19937_64 rng(202);
  for (const auto& [name, p] : a.params().params()) {
    Var q = p;
    q.mutable_value() = random_tensor(p.value().shape(), rng, -0.2, 0.2);
  }
  Archive ar;
  a.save_to(ar);
  InitialNetConfig other = small_cfg();
  other.seed = 99;
  InitialNet b(other);
  b.load_from(Archive::from_bytes(ar.to_bytes()));
  Frame f = make_frame(random_tensor({3, 64, 64}, rng, 0, 1));
  CHECK((restore_single(f, a).pixels - restore_single(f, b).pixels).max_abs() == 0.0);
  CHECK(a.params().hash() == b.params().hash());
}

TEST_CASE("compute_mask definition") {
  SUBCASE("identical inputs") {
    std::mt19937_64 rng(203);
    Frame f = make_frame(random_tensor({3, 16, 16}, rng, 0, 1));
    RaindropMask m = compute_mask(f, f, 0.05);
    CHECK(m.evidence.max_abs() == 0.0);
    CHECK(m.nonrain_weight.min() == 1.0);
  }
  SUBCASE("+0.3 patch") {
    Tensor s(Shape{3, 32, 32}, 0.4);
    Tensor i = s;
    for (int c = 0; c < 3; ++c)
      for (int y = 5; y < 15; ++y)
        for (int x = 8; x < 18; ++x) i.at(c, y, x) += 0.3;
    RaindropMask m = compute_mask(make_frame(i), make_frame(s), 0.05);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const bool in = y >= 5 && y < 15 && x >= 8 && x < 18;
        CHECK(m.evidence.at(0, y, x) == doctest::Approx(in ? 0.3 : 0.0).epsilon(1e-12));
        CHECK(m.nonrain_weight.at(0, y, x) == (in ? 0.0 : 1.0));
      }
  }
  SUBCASE("loop oracle, symmetry, monotonicity") {
    std::mt19937_64 rng(204);
    for (int draw = 0; draw < 10; ++draw) {
      Tensor i = random_tensor({3, 12, 12}, rng, 0, 1);
      Tensor s = random_tensor({3, 12, 12}, rng, 0, 1);
      RaindropMask m = compute_mask(make_frame(i), make_frame(s), 0.3);
      RaindropMask r = compute_mask(make_frame(s), make_frame(i), 0.3);
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 12; ++x) {
          double e = 0.0;
          for (int c = 0; c < 3; ++c) e += std::abs(i.at(c, y, x) - s.at(c, y, x));
          e /= 3.0;
          REQUIRE(m.evidence.at(0, y, x) == e);
          REQUIRE(m.nonrain_weight.at(0, y, x) == (e < 0.3 ? 1.0 : 0.0));
        }
      CHECK((m.evidence - r.evidence).max_abs() == 0.0);
      CHECK((m.nonrain_weight - r.nonrain_weight).max_abs() == 0.0);
      // Scaling the difference by c > 1 never shrinks the raindrop region.
      Tensor scaled = s + (i - s) * 1.7;
      RaindropMask big = compute_mask(make_frame(scaled), make_frame(s), 0.3);
      for (std::size_t p = 0; p < big.nonrain_weight.size(); ++p)
        CHECK(big.nonrain_weight[p] <= m.nonrain_weight[p]);
    }
  }
}

TEST_CASE("single-image loss values") {
  const int h = 8, w = 8;
  Tensor gt(Shape{3, h, w}, 0.3);
  FeatureMap feat{Tensor(Shape{4, 4, 4}, 0.2), 0};
  SUBCASE("perfect restoration leaves only the adversarial term") {
    auto v = single_image_loss(make_frame(gt), make_frame(gt), 0.5, feat, feat);
    CHECK(v.pixel == 0.0);
    CHECK(v.perceptual == 0.0);
    CHECK(v.total == doctest::Approx(-0.6931).epsilon(1e-4));
    CHECK(v.total == std::log(0.5 + kAdversarialEps));
  }
  SUBCASE("unit difference at one pixel of one channel") {
    Tensor s = gt;
    s.at(1, 2, 5) += 1.0;
    auto v = single_image_loss(make_frame(gt), make_frame(s), 0.5, feat, feat);
    CHECK(v.pixel == doctest::Approx(1.0 / (3 * h * w)).epsilon(1e-14));
    CHECK(v.total == doctest::Approx(1.0 / (3 * h * w) + std::log(0.5 + kAdversarialEps)).epsilon(1e-14));
  }
  SUBCASE("saturated discriminator hits the epsilon floor") {
    auto v = single_image_loss(make_frame(gt), make_frame(gt), 1.0, feat, feat);
    CHECK(v.adversarial == doctest::Approx(std::log(kAdversarialEps)).epsilon(1e-12));
    CHECK(std::isfinite(v.total));
    CHECK_THROWS_AS(single_image_loss(make_frame(gt), make_frame(gt), 0.0, feat, feat), std::invalid_argument);
  }
}

TEST_CASE("pixel term gradient") {
  std::mt19937_64 rng(205);
  for (int draw = 0; draw < 20; ++draw) {
    Tensor gt = random_tensor({3, 8, 8}, rng, 0, 1);
    Tensor s = random_tensor({3, 8, 8}, rng, 0, 1);
    Tensor f = random_tensor({2, 4, 4}, rng);
    auto fn = [&](const std::vector<Var>& v) {
      Var feat = Var::constant(f);
      return single_image_loss(v[0], v[1], Var::constant(Tensor(Shape{1}, 0.3)), feat, feat).total;
    };
    CHECK(grad_check(fn, {gt, s}, 1).rel_error < 1e-3);
  }
}

TEST_CASE("toy overfitting") {
  VideoClip scene = make_translating_scene(1, 64, 64, 0, 0, 206);
  const Tensor& clean = scene.frames[0].pixels;

  SUBCASE("raindrop-free input stays put") {
    InitialNet net(small_cfg());
    Adam g({ParamGroup{net.params().vars(), 1e-4}});
    Adam d({ParamGroup{net.disc_params().vars(), 1e-4}});
    for (int step = 0; step < 40; ++step) overfit_step(net, g, d, clean, clean);
    double err = 0.0;
    Tensor out = restore_single(make_frame(clean), net).pixels;
    for (std::size_t i = 0; i < out.size(); ++i) err += std::abs(out[i] - clean[i]);
    err /= out.size();
    MESSAGE("clean overfit mean abs error: " << err);
    CHECK(err < 0.02);
  }

  SUBCASE("raindrop error falls below the untrained error") {
    RaindropShape drop;
    drop.cx = 30;
    drop.cy = 34;
    drop.ra = 10;
    drop.rb = 8;
    std::vector<RaindropShape> drops{drop};
    Composite comp = composite_drops(scene.frames[0], drops, 7);
    InitialNet net(small_cfg());
    Adam g({ParamGroup{net.params().vars(), 2e-3}});
    Adam d({ParamGroup{net.disc_params().vars(), 1e-4}});
    const double before = mean_abs_in(restore_single(comp.frame, net).pixels, clean, comp.alpha);
    for (int step = 0; step < 150; ++step) overfit_step(net, g, d, comp.frame.pixels, clean);
    const double after = mean_abs_in(restore_single(comp.frame, net).pixels, clean, comp.alpha);
    MESSAGE("drop-region error untrained " << before << " trained " << after);
    CHECK(after < before);
  }
}
