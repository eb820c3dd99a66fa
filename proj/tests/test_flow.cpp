#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dropvid/flow.hpp"
#include "dropvid/log.hpp"
#include "dropvid/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dropvid;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

Tensor constant_flow(int h, int w, double u, double v) {
  Tensor f(Shape{2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      f.at(0, y, x) = u;
      f.at(1, y, x) = v;
    }
  return f;
}

Tensor box_blur(const Tensor& t, int r, int passes) {
  Tensor cur = t;
  for (int p = 0; p < passes; ++p) {
    Tensor next(cur.shape());
    for (int c = 0; c < cur.channels(); ++c)
      for (int y = 0; y < cur.height(); ++y)
        for (int x = 0; x < cur.width(); ++x) {
          double s = 0.0;
          int n = 0;
          for (int i = -r; i <= r; ++i)
            for (int j = -r; j <= r; ++j) {
              s += cur.at(c, std::clamp(y + i, 0, cur.height() - 1), std::clamp(x + j, 0, cur.width() - 1));
              ++n;
            }
          next.at(c, y, x) = s / n;
        }
    cur = next;
  }
  return cur;
}

}  // namespace

TEST_CASE("zero flow warps bit-exactly") {
  std::mt19937_64 rng(1);
  Tensor img = random_tensor({3, 9, 11}, rng, 0.0, 1.0);
  Tensor out = warp_tensor(img, Tensor(Shape{2, 9, 11}, 0.0));
  CHECK(out.storage() == img.storage());
}

TEST_CASE("integer flow matches loop gather oracle") {
  std::mt19937_64 rng(2);
  Tensor img = random_tensor({3, 12, 10}, rng, 0.0, 1.0);
  for (auto [dx, dy] : {std::pair{1, 0}, std::pair{-2, 1}, std::pair{0, -3}}) {
    Tensor out = warp_tensor(img, constant_flow(12, 10, dx, dy));
    CHECK(out.storage() == oracle::gather(img, dx, dy).storage());
  }
}

TEST_CASE("constant image is invariant under bounded flow") {
  std::mt19937_64 rng(3);
  Tensor img(Shape{3, 10, 10}, 0.37);
  Tensor flow = random_tensor({2, 10, 10}, rng, -4.0, 4.0);
  Tensor out = warp_tensor(img, flow);
  for (double v : out.values()) CHECK(v == 0.37);
}

TEST_CASE("warp is linear in the image") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({2, 8, 8}, rng), y = random_tensor({2, 8, 8}, rng);
  Tensor flow = random_tensor({2, 8, 8}, rng, -2.0, 2.0);
  const double a = 0.7, b = -1.3;
  Tensor lhs = warp_tensor(x * a + y * b, flow);
  Tensor rhs = warp_tensor(x, flow) * a + warp_tensor(y, flow) * b;
  CHECK((lhs - rhs).max_abs() < 1e-12);
}

TEST_CASE("warp gradients match finite differences") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    Tensor img = random_tensor({2, 8, 8}, rng);
    Tensor flow = random_tensor({2, 8, 8}, rng, -1.9, 1.9);
    testutil::nudge_off_grid(flow);
    Tensor probe = random_tensor({2, 8, 8}, rng);
    auto f = [&](const std::vector<Var>& v) { return testutil::project(ops::warp(v[0], v[1]), probe); };
    CHECK(grad_check(f, {img, flow}, 0).rel_error < 1e-3);
    CHECK(grad_check(f, {img, flow}, 1).rel_error < 1e-3);
  }
}

TEST_CASE("smooth warp round trip") {
  std::mt19937_64 rng(6);
  Tensor img = box_blur(random_tensor({1, 48, 48}, rng, 0.0, 1.0), 2, 3);
  Tensor flow(Shape{2, 48, 48});
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      flow.at(0, y, x) = 1.5 * std::sin(0.1 * y);
      flow.at(1, y, x) = 1.2 * std::cos(0.08 * x);
    }
  Tensor back = warp_tensor(warp_tensor(img, flow), flow * -1.0);
  double err = 0.0;
  int n = 0;
  for (int y = 4; y < 44; ++y)
    for (int x = 4; x < 44; ++x) {
      err += std::abs(back.at(0, y, x) - img.at(0, y, x));
      ++n;
    }
  CHECK(err / n < 0.02);
}

TEST_CASE("estimate_flow on identical frames is near zero") {
  VideoClip clip = make_translating_scene(1, 64, 64, 0.0, 0.0, 21);
  FlowEstimator est;
  std::vector<std::pair<Frame, Frame>> pairs{{clip.frames[0], clip.frames[0]}};
  est.warm_up(pairs, 5, 1e-3);
  FlowField f = est.estimate(clip.frames[0], clip.frames[0]);
  double mag = 0.0;
  const std::size_t plane = 64 * 64;
  for (std::size_t p = 0; p < plane; ++p) mag += std::hypot(f.vectors[p], f.vectors[plane + p]);
  CHECK(mag / plane < 0.3);
}

TEST_CASE("estimate_flow recovers a synthetic 3 px translation") {
  // frame 1 = frame 0 sampled 3 px to the right: I_j(p) = S_i(p + (3, 0)).
  VideoClip clip = make_translating_scene(2, 64, 64, -3.0, 0.0, 22);
  Frame src = clip.frames[0], tgt = clip.frames[1];
  src.time_index = 4;
  tgt.time_index = 7;
  FlowEstimator est;
  FlowField f = est.estimate(src, tgt);
  CHECK(f.source_index == 4);
  CHECK(f.target_index == 7);
  double u = 0.0, v = 0.0;
  int n = 0;
  for (int y = 8; y < 56; ++y)
    for (int x = 8; x < 56; ++x) {
      u += f.vectors.at(0, y, x);
      v += f.vectors.at(1, y, x);
      ++n;
    }
  CHECK(u / n == doctest::Approx(3.0).epsilon(0.5 / 3.0));
  CHECK(std::abs(v / n) < 0.5);
}

TEST_CASE("textureless pair still yields a valid warp") {
  Frame a{Tensor(Shape{3, 64, 64}, 0.5), 0};
  Frame b{Tensor(Shape{3, 64, 64}, 0.5), 1};
  FlowEstimator est;
  FlowField f = est.estimate(a, b);
  Frame w = warp(a, f);
  for (double v : w.pixels.values()) CHECK(v == 0.5);
}

TEST_CASE("external backend reports how to fall back") {
  FlowEstimator est(FlowBackend::external);
  Frame a{Tensor(Shape{3, 64, 64}, 0.5), 0};
  CHECK_THROWS_AS(est.estimate(a, a), FlowBackendUnavailable);
  try {
    est.estimate(a, a);
  } catch (const FlowBackendUnavailable& e) {
    CHECK(std::string(e.what()).find("toy-trainable") != std::string::npos);
  }
}

TEST_CASE("external backend reads precomputed DVFL flows") {
  auto dir = std::filesystem::temp_directory_path() / "dropvid_ext_flow";
  std::filesystem::create_directories(dir);
  FlowField f{constant_flow(64, 64, 1.25, -0.5), 3, 5};
  write_dvfl(dir / "flow_3_5.dvfl", f);
  FlowEstimator est(FlowBackend::external);
  est.external_dir = dir;
  FlowField got = est.estimate(Frame{Tensor(Shape{3, 64, 64}, 0.1), 3}, Frame{Tensor(Shape{3, 64, 64}, 0.2), 5});
  CHECK(got.vectors.storage() == f.vectors.storage());
  std::filesystem::remove_all(dir);
}

TEST_CASE("flow_loss") {
  Frame cur{Tensor(Shape{3, 8, 8}, 0.4), 2};
  std::vector<Frame> warped(4, cur);
  CHECK(flow_loss(warped, cur) == 0.0);
  warped[1].pixels.fill(0.5);
  CHECK(flow_loss(warped, cur) == doctest::Approx(0.01 / 4.0));
  CHECK_THROWS(flow_loss(std::span<const Frame>{}, cur));
}

TEST_CASE("flow_loss shrinks as misalignment shrinks") {
  VideoClip clip = make_translating_scene(1, 64, 64, 0.0, 0.0, 23);
  const Tensor& img = clip.frames[0].pixels;
  double prev = 1e9;
  for (double shift : {4.0, 3.0, 2.0, 1.0, 0.5, 0.0}) {
    Frame w{warp_tensor(img, constant_flow(64, 64, shift, 0.0)), 0};
    const double l = flow_loss(std::span<const Frame>(&w, 1), clip.frames[0]);
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev == 0.0);
}

TEST_CASE("masked_flow_finetune_loss") {
  std::mt19937_64 rng(8);
  Tensor s_t = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
  Tensor flow = random_tensor({2, 8, 8}, rng, -1.5, 1.5);
  Tensor s_i = warp_tensor(s_t, flow);
  RaindropMask half = mask_from_evidence(Tensor(Shape{1, 8, 8}, 0.0), 0.05);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 4; ++x) half.nonrain_weight.at(0, y, x) = 0.0;

  SUBCASE("aligned pair gives zero") {
    CHECK(masked_flow_finetune_loss(Frame{s_t}, Frame{s_i}, FlowField{flow}, half) == 0.0);
  }
  SUBCASE("misalignment confined to raindrop pixels gives zero") {
    Tensor s_i2 = s_i;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 4; ++x) s_i2.at(c, y, x) += 0.3;
    CHECK(masked_flow_finetune_loss(Frame{s_t}, Frame{s_i2}, FlowField{flow}, half) == 0.0);
  }
  SUBCASE("matches a scalar-loop masked MSE") {
    Tensor other = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
    Tensor w = warp_tensor(s_t, flow);
    double acc = 0.0;
    int n = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          if (half.nonrain_weight.at(0, y, x) != 1.0) continue;
          const double d = w.at(c, y, x) - other.at(c, y, x);
          acc += d * d;
          ++n;
        }
    CHECK(masked_flow_finetune_loss(Frame{s_t}, Frame{other}, FlowField{flow}, half) == doctest::Approx(acc / n).epsilon(1e-14));
  }
  SUBCASE("fully masked neighbor contributes zero with a warning") {
    set_log_quiet(true);
    const long before = warning_count();
    RaindropMask all = mask_from_evidence(Tensor(Shape{1, 8, 8}, 1.0), 0.05);
    CHECK(masked_flow_finetune_loss(Frame{s_t}, Frame{random_tensor({3, 8, 8}, rng)}, FlowField{flow}, all) == 0.0);
    CHECK(warning_count() == before + 1);
    set_log_quiet(false);
  }
}

TEST_CASE("feature-level flow is averaged and rescaled by the stride") {
  FlowField f{constant_flow(16, 16, 4.0, -2.0), 0, 1};
  FlowField d = downscale_flow(f, 4);
  CHECK(d.vectors.shape() == Shape{2, 4, 4});
  CHECK(d.vectors.at(0, 1, 2) == doctest::Approx(1.0));
  CHECK(d.vectors.at(1, 3, 0) == doctest::Approx(-0.5));
}

TEST_CASE("DVFL round trip is bit-exact") {
  std::mt19937_64 rng(9);
  Tensor v = random_tensor({2, 5, 7}, rng, -10.0, 10.0);
  for (double& x : v.values()) x = static_cast<float>(x);
  FlowField f{v, 1, 2};
  const std::string bytes = dvfl_bytes(f);
  CHECK(bytes.size() == 12 + 5 * 7 * 8);
  CHECK(bytes.substr(0, 4) == "DVFL");
  FlowField back = dvfl_from_bytes(bytes, 1, 2);
  CHECK(back.vectors.storage() == f.vectors.storage());
  CHECK(dvfl_bytes(back) == bytes);
  CHECK_THROWS(dvfl_from_bytes(bytes.substr(0, 20)));
}

TEST_CASE("flow sanity bound") {
  FlowField ok{constant_flow(8, 8, 3.0, 4.0)};
  CHECK_NOTHROW(validate_flow(ok));
  FlowField bad{constant_flow(8, 8, 30.0, 0.0)};
  CHECK_THROWS(validate_flow(bad));
}
