#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dropvid/smoke.hpp"
#include "dropvid/synth.hpp"
#include "dropvid/training.hpp"

using namespace dropvid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dropvid_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig tiny() {
  TrainConfig cfg;
  cfg.crop_size = 64;
  cfg.batch_size = 1;
  cfg.lr_stage1 = 1e-3;
  cfg.lr_stage2 = 1e-3;
  cfg.feature_channels = 8;
  cfg.init_width = 8;
  cfg.init_attention_width = 4;
  return cfg;
}

PairedData one_pair(int size, std::uint64_t seed) {
  const VideoClip scene = make_translating_scene(1, size, size, 0, 0, seed);
  RaindropShape d;
  d.cx = size * 0.45;
  d.cy = size * 0.55;
  d.ra = size / 8.0;
  d.rb = size / 10.0;
  const std::vector<RaindropShape> drops{d};
  const Composite c = composite_drops(scene.frames[0], drops, seed);
  return PairedData{{c.frame}, {scene.frames[0]}};
}

std::vector<VideoClip> rainy_clips(int frames, std::uint64_t seed) {
  const VideoClip scene = make_translating_scene(frames, 64, 64, 1.0, 0.5, seed);
  DropTrajectory t;
  t.shape.cx = 30;
  t.shape.cy = 28;
  t.shape.ra = 8;
  t.shape.rb = 6;
  const std::vector<DropTrajectory> traj{t};
  return {synthesize_clip(scene, traj, 1.5, seed).rain};
}

}  // namespace

TEST_CASE("config text round-trips and rejects bad input with a line number") {
  const TrainConfig c = parse_config("# comment\ncrop_size = 64 # trailing\n\nlr_stage2=0.0025\nuse_mask = false\n"
                                     "mask_mode = soft\nseed = 42\n");
  CHECK(c.crop_size == 64);
  CHECK(c.lr_stage2 == 0.0025);
  CHECK_FALSE(c.use_mask);
  CHECK(c.mask_mode == "soft");
  CHECK(c.seed == 42);
  CHECK(c.batch_size == TrainConfig{}.batch_size);

  TrainConfig odd = c;
  odd.lr_stage1 = 1.0 / 3.0;
  odd.lambda_t = 0.1 + 0.2;
  const std::string text = config_to_text(odd);
  const TrainConfig back = parse_config(text);
  CHECK(config_to_text(back) == text);
  CHECK(back.lr_stage1 == odd.lr_stage1);
  CHECK(back.lambda_t == odd.lambda_t);

  auto message = [](const std::string& t) {
    try {
      parse_config(t);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("seed = 1\n\nlearning_rate = 3\n").find("line 3") != std::string::npos);
  CHECK(message("seed = 1\n\nlearning_rate = 3\n").find("learning_rate") != std::string::npos);
  CHECK(message("batch_size = four\n").find("line 1") != std::string::npos);
  CHECK(message("use_mask = yes\n").find("line 1") != std::string::npos);
  CHECK(message("crop_size\n").find("line 1") != std::string::npos);
  CHECK_THROWS_AS(parse_config("crop_size = 66\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("batch_size = 0\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("lambda_t = -1\n"), std::invalid_argument);

  const fs::path dir = scratch("config");
  {
    std::ofstream(dir / "a.conf") << text;
  }
  CHECK(config_to_text(load_config(dir / "a.conf")) == text);
  CHECK_THROWS(load_config(dir / "missing.conf"));
  fs::remove_all(dir);
}

TEST_CASE("ablation flags map onto forward options") {
  TrainConfig c;
  c.use_mask = false;
  c.use_initial = false;
  c.use_alignment = false;
  const Stage2Options o = stage2_options(c);
  CHECK_FALSE(o.use_mask);
  CHECK_FALSE(o.use_initial);
  CHECK_FALSE(o.use_alignment);
  CHECK(effective_lambda_t(c) == 0.5);
  c.use_temporal = false;
  CHECK(effective_lambda_t(c) == 0.0);
}

TEST_CASE("stage 1: pixel term falls over 20 steps on one pair") {
  const PairedData data = one_pair(128, 3);
  TrainConfig cfg = tiny();
  cfg.crop_size = 128;
  cfg.steps_stage1 = 20;
  cfg.lr_stage1 = 1e-4;
  cfg.adversarial_weight = 1e-3;
  InitialNet net(initial_config(cfg));
  const std::vector<Stage1Step> h = train_stage1(data, net, cfg);
  REQUIRE(h.size() == 20);
  CHECK(h.back().pixel < h.front().pixel);
  for (const Stage1Step& s : h) CHECK(std::isfinite(s.total));
}

TEST_CASE("stage 1: seeded runs agree, zero learning rate freezes everything") {
  const PairedData data = one_pair(96, 4);
  TrainConfig cfg = tiny();
  cfg.steps_stage1 = 3;
  cfg.batch_size = 2;
  InitialNet a(initial_config(cfg)), b(initial_config(cfg));
  const auto ha = train_stage1(data, a, cfg);
  const auto hb = train_stage1(data, b, cfg);
  CHECK(ha[0].total == hb[0].total);
  CHECK(ha.back().total == hb.back().total);
  CHECK(a.hash() == b.hash());

  cfg.lr_stage1 = 0.0;
  InitialNet frozen(initial_config(cfg));
  const std::string before = frozen.hash();
  train_stage1(data, frozen, cfg);
  CHECK(frozen.hash() == before);
}

TEST_CASE("stage 1 rejects unpaired data") {
  PairedData data = one_pair(64, 5);
  data.clean.clear();
  InitialNet net(initial_config(tiny()));
  CHECK_THROWS_AS(train_stage1(data, net, tiny()), std::invalid_argument);
  PairedData mism = one_pair(64, 5);
  mism.clean[0] = make_translating_scene(1, 64, 68, 0, 0, 1).frames[0];
  CHECK_THROWS_AS(train_stage1(mism, net, tiny()), std::invalid_argument);
}

TEST_CASE("stage 2: stage 1 stays bit-identical through 100 steps") {
  const std::vector<VideoClip> clips = rainy_clips(8, 6);
  TrainConfig cfg = tiny();
  InitialNet s1(initial_config(cfg));
  train_stage1(one_pair(64, 6), s1, [] {
    TrainConfig c = tiny();
    c.steps_stage1 = 5;
    return c;
  }());
  const std::string before = s1.hash();
  FlowEstimator flow;
  VideoNet net(align_config(cfg), decoder_config(cfg));
  const std::string net_before = net.hash();
  Stage2Trainer tr(clips, s1, flow, net, cfg);
  tr.run(100);
  CHECK(s1.hash() == before);
  CHECK(net.hash() != net_before);
}

TEST_CASE("stage 2: total loss falls over 500 steps on a 16-frame clip") {
  const std::vector<VideoClip> clips = rainy_clips(16, 8);
  TrainConfig cfg = tiny();
  cfg.use_temporal = false;
  InitialNet s1(initial_config(cfg));
  FlowEstimator flow;
  VideoNet net(align_config(cfg), decoder_config(cfg));
  Stage2Trainer tr(clips, s1, flow, net, cfg);
  double start = 0, end = 0;
  for (int t = 2; t < 14; ++t) start += tr.evaluate(0, t).total;
  tr.run(500);
  for (int t = 2; t < 14; ++t) end += tr.evaluate(0, t).total;
  MESSAGE("stage-2 L_all " << start / 12 << " -> " << end / 12);
  CHECK(end < start);
}

TEST_CASE("stage 2: with every loss off nothing moves") {
  const std::vector<VideoClip> clips = rainy_clips(6, 9);
  TrainConfig cfg = tiny();
  cfg.loss_flow = cfg.loss_mask_ct = cfg.loss_mask_cl = cfg.loss_temp = false;
  InitialNet s1(initial_config(cfg));
  FlowEstimator flow;
  VideoNet net(align_config(cfg), decoder_config(cfg));
  const std::string nh = net.hash(), fh = flow.params().hash();
  Stage2Trainer tr(clips, s1, flow, net, cfg);
  const auto log = tr.run(5);
  CHECK(log.back().total == 0.0);
  CHECK(net.hash() == nh);
  CHECK(flow.params().hash() == fh);
}

TEST_CASE("stage 2 rejects short clips and missing checkpoints") {
  const std::vector<VideoClip> clips{make_translating_scene(4, 64, 64, 0, 0, 1)};
  TrainConfig cfg = tiny();
  InitialNet s1(initial_config(cfg));
  FlowEstimator flow;
  VideoNet net(align_config(cfg), decoder_config(cfg));
  CHECK_THROWS_AS(Stage2Trainer(clips, s1, flow, net, cfg), std::invalid_argument);
  CHECK_THROWS_AS(Stage2Trainer({}, s1, flow, net, cfg), std::invalid_argument);
  const fs::path dir = scratch("missing");
  CHECK_THROWS_AS(load_stage1(dir / "stage1.ckpt"), std::runtime_error);
  CHECK_THROWS_AS(load_stage2(dir / "stage2.ckpt"), std::runtime_error);
  CHECK_THROWS_AS(load_flow(dir / "flow.ckpt"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("checkpoints round-trip with their metadata") {
  const fs::path dir = scratch("ckpt");
  TrainConfig cfg = tiny();
  cfg.seed = 77;
  InitialNet s1(initial_config(cfg));
  save_stage1(dir / "stage1.ckpt", s1);
  const InitialNet s1b = load_stage1(dir / "stage1.ckpt");
  CHECK(s1b.hash() == s1.hash());
  CHECK(s1b.config().width == 8);

  VideoNet net(align_config(cfg), decoder_config(cfg));
  Stage2Options opt;
  opt.use_mask = false;
  opt.mask_mode = MaskMode::soft;
  opt.tau = 0.07;
  opt.flow_pair = FlowPair::initial_to_initial;
  save_stage2(dir / "stage2.ckpt", net, opt);
  CHECK(load_stage2(dir / "stage2.ckpt").hash() == net.hash());
  const Stage2Options ob = load_stage2_options(dir / "stage2.ckpt");
  CHECK_FALSE(ob.use_mask);
  CHECK(ob.use_alignment);
  CHECK(ob.mask_mode == MaskMode::soft);
  CHECK(ob.tau == 0.07);
  CHECK(ob.flow_pair == FlowPair::initial_to_initial);

  FlowEstimator flow(FlowBackend::toy, 123);
  flow.pyramid().levels = 2;
  flow.pyramid().window_sigma = 2.5;
  flow.finetune_lr = 3e-6;
  save_flow(dir / "flow.ckpt", flow);
  const FlowEstimator fb = load_flow(dir / "flow.ckpt");
  CHECK(fb.params().hash() == flow.params().hash());
  CHECK(fb.pyramid().levels == 2);
  CHECK(fb.pyramid().window_sigma == 2.5);
  CHECK(fb.finetune_lr == 3e-6);

  const std::string bytes = [&] {
    std::ifstream in(dir / "stage1.ckpt", std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  }();
  save_stage1(dir / "again.ckpt", s1b);
  std::ifstream in(dir / "again.ckpt", std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(in), {}) == bytes);
  fs::remove_all(dir);
}

TEST_CASE("loss log lines are JSON objects with every term") {
  LossReport r{0.25, 0.5, 0.125, 1.0, 0.5, 0.0};
  r.total = loss_total(r);
  const std::string line = loss_json_line(7, r);
  CHECK(line == R"({"step":7,"flow":0.25,"mask_ct":0.5,"mask_cl":0.125,"temp":1.0,"total":1.375})");
}
