#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

#include "dropvid/archive.hpp"
#include "dropvid/core_types.hpp"
#include "dropvid/image_io.hpp"
#include "test_util.hpp"

using namespace dropvid;
using testutil::random_tensor;
namespace fs = std::filesystem;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dropvid_core_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("clamp_frame examples, idempotence and rejection") {
  Tensor t(Shape{3, 2, 2}, 0.5);
  t.at(0, 0, 0) = 1.3;
  t.at(1, 1, 1) = -0.2;
  t.at(2, 0, 1) = 1.0;
  const Frame c = clamp_frame(Frame{t, 4});
  CHECK(c.pixels.at(0, 0, 0) == 1.0);
  CHECK(c.pixels.at(1, 1, 1) == 0.0);
  CHECK(c.pixels.at(2, 0, 1) == 1.0);
  CHECK(c.pixels.at(0, 1, 0) == 0.5);
  CHECK(c.time_index == 4);
  CHECK(same_bits(clamp_frame(c).pixels, c.pixels));

  std::mt19937_64 rng(1);
  const Tensor in_range = random_tensor({3, 5, 7}, rng, 0.0, 1.0);
  CHECK(same_bits(clamp_frame(Frame{in_range, 0}).pixels, in_range));

  t.at(0, 1, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    clamp_frame(Frame{t, 0});
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("network size contract carries the padding hint") {
  CHECK_NOTHROW(require_network_size(64, 128));
  try {
    require_network_size(66, 70);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("68x72") != std::string::npos);
    CHECK(msg.find("bottom 2, right 2") != std::string::npos);
  }
  CHECK_THROWS_AS(require_network_size(60, 64), std::invalid_argument);
}

TEST_CASE("clip validation") {
  VideoClip c;
  for (int i = 0; i < 3; ++i) c.frames.push_back(Frame{Tensor(Shape{3, 4, 4}, 0.1), i});
  CHECK_NOTHROW(validate_clip(c));
  c.frames[2].time_index = 5;
  CHECK_THROWS_AS(validate_clip(c), std::invalid_argument);
  c.frames[2] = Frame{Tensor(Shape{3, 4, 5}, 0.1), 2};
  CHECK_THROWS_AS(validate_clip(c), std::invalid_argument);
  CHECK(c.window_length() == 5);
}

TEST_CASE("mask weight follows evidence and tau") {
  Tensor e(Shape{1, 2, 3}, 0.0);
  RaindropMask zero = mask_from_evidence(e, 0.05);
  CHECK(zero.nonrain_weight.min() == 1.0);
  e.at(0, 0, 0) = 0.049;
  e.at(0, 0, 1) = 0.05;
  e.at(0, 1, 2) = 0.4;
  const RaindropMask hard = mask_from_evidence(e, 0.05);
  CHECK(hard.nonrain_weight.at(0, 0, 0) == 1.0);
  CHECK(hard.nonrain_weight.at(0, 0, 1) == 0.0);
  CHECK(hard.nonrain_weight.at(0, 1, 2) == 0.0);
  const RaindropMask soft = mask_from_evidence(e, 0.05, MaskMode::soft);
  CHECK(soft.nonrain_weight.at(0, 1, 0) == 1.0);
  CHECK(soft.nonrain_weight.at(0, 0, 0) == doctest::Approx(1.0 - 0.049 / 0.05));
  CHECK(soft.nonrain_weight.at(0, 1, 2) == 0.0);
  const RaindropMask full = full_mask(2, 3);
  CHECK(full.nonrain_weight.min() == 1.0);
}

TEST_CASE("flow sanity bound and finiteness") {
  FlowField f{Tensor(Shape{2, 8, 10}, 0.0), 0, 1};
  CHECK_NOTHROW(validate_flow(f));
  f.vectors.at(0, 3, 3) = 10.0;
  CHECK_NOTHROW(validate_flow(f));
  f.vectors.at(1, 3, 3) = 0.5;
  CHECK_THROWS_AS(validate_flow(f), std::invalid_argument);
  f.vectors.at(1, 3, 3) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(validate_flow(f), std::invalid_argument);
}

TEST_CASE("loss report total is the weighted sum") {
  LossReport r{0.1, 0.2, 0.3, 0.4, 0.5, 0.0};
  r.total = loss_total(r);
  CHECK(r.total == 0.1 + 0.2 + 0.3 + 0.5 * 0.4);
  CHECK(LossReport{}.lambda_t == 0.5);
}

TEST_CASE("every type round-trips through the archive bit-exactly") {
  std::mt19937_64 rng(5);
  const Frame f{random_tensor({3, 6, 7}, rng, 0.0, 1.0), 9};
  const Frame f2 = frame_from_archive(Archive::from_bytes(to_archive(f).to_bytes()));
  CHECK(same_bits(f2.pixels, f.pixels));
  CHECK(f2.time_index == 9);

  RaindropMask m = mask_from_evidence(random_tensor({1, 6, 7}, rng, 0.0, 0.1), 0.03, MaskMode::soft);
  const RaindropMask m2 = mask_from_archive(Archive::from_bytes(to_archive(m).to_bytes()));
  CHECK(same_bits(m2.evidence, m.evidence));
  CHECK(same_bits(m2.nonrain_weight, m.nonrain_weight));
  CHECK(m2.threshold == m.threshold);

  const FlowField fl{random_tensor({2, 6, 7}, rng, -3.0, 3.0), 2, 4};
  const FlowField fl2 = flow_from_archive(Archive::from_bytes(to_archive(fl).to_bytes()));
  CHECK(same_bits(fl2.vectors, fl.vectors));
  CHECK(fl2.source_index == 2);
  CHECK(fl2.target_index == 4);

  const FeatureMap fm{random_tensor({5, 3, 2}, rng), 7};
  const FeatureMap fm2 = feature_from_archive(Archive::from_bytes(to_archive(fm).to_bytes()));
  CHECK(same_bits(fm2.activations, fm.activations));
  CHECK(fm2.time_index == 7);

  const OffsetField of{random_tensor({18, 3, 2}, rng, -8.0, 8.0)};
  CHECK(same_bits(offsets_from_archive(Archive::from_bytes(to_archive(of).to_bytes())).offsets, of.offsets));

  LossReport r{0.125, 1.0 / 3.0, 2e-9, 0.7, 0.5, 0.0};
  r.total = loss_total(r);
  const LossReport r2 = loss_report_from_archive(Archive::from_bytes(to_archive(r).to_bytes()));
  CHECK(std::memcmp(&r2, &r, sizeof r) == 0);
}

TEST_CASE("archive rejects corrupt data and reports format details") {
  Archive a;
  a.put("w", Tensor(Shape{2, 2}, 1.5));
  a.put_scalar("s", 3.0);
  std::string bytes = a.to_bytes();
  CHECK(bytes.substr(0, 4) == "DVCK");
  const Archive b = Archive::from_bytes(bytes);
  CHECK(b.get_scalar("s") == 3.0);
  CHECK(b.to_bytes() == bytes);
  CHECK_THROWS(Archive::from_bytes(bytes.substr(0, bytes.size() - 3)));
  bytes[0] = 'X';
  CHECK_THROWS(Archive::from_bytes(bytes));
  CHECK_THROWS(a.get("missing"));
}

TEST_CASE("content hash is the git blob hash") {
  CHECK(content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("PNG frames round-trip at 8-bit precision") {
  const fs::path dir = scratch("png");
  std::mt19937_64 rng(2);
  const Frame f{random_tensor({3, 9, 11}, rng, 0.0, 1.0), 0};
  write_frame_png(dir / frame_filename(3), f);
  const Frame back = read_frame_png(dir / frame_filename(3), 3);
  CHECK(same_bits(back.pixels, quantize8(f.pixels)));
  CHECK(same_bits(quantize8(back.pixels), back.pixels));
  CHECK(frame_filename(123) == "frame_000123.png");

  const Tensor g = random_tensor({1, 9, 11}, rng, 0.0, 1.0);
  write_gray_png(dir / "g.png", g);
  CHECK(same_bits(read_gray_png(dir / "g.png"), quantize8(g)));

  VideoClip clip;
  for (int i = 0; i < 3; ++i) clip.frames.push_back(Frame{quantize8(random_tensor({3, 4, 5}, rng, 0.0, 1.0)), i});
  write_clip_dir(dir / "clip", clip);
  const VideoClip back_clip = read_clip_dir(dir / "clip");
  REQUIRE(back_clip.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(same_bits(back_clip.frames[i].pixels, clip.frames[i].pixels));
  CHECK_THROWS(list_frames(dir / "nope"));
  fs::remove_all(dir);
}
