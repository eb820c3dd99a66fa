#include "dropvid/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "dropvid/archive.hpp"
#include "dropvid/eval.hpp"
#include "dropvid/image_io.hpp"
#include "dropvid/log.hpp"
#include "dropvid/smoke.hpp"
#include "dropvid/training.hpp"

namespace dropvid::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// --seed, else DROPVID_SEED, else the fallback.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("DROPVID_SEED"); env && *env) {
    std::uint64_t v = 0;
    const std::string s = env;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw CliError(kUsage, "DROPVID_SEED must be a non-negative integer, got '" + s + "'");
    return v;
  }
  return fallback;
}

// A clip directory's rain frames, or the directory itself.
fs::path rain_frames_dir(const fs::path& dir) { return fs::is_directory(dir / "rain") ? dir / "rain" : dir; }

json config_json(const TrainConfig& cfg) {
  json j = json::object();
  std::istringstream in(config_to_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

struct Manifest {
  json j;
  explicit Manifest(const std::string& command, int argc, const char* const* argv) {
    j["command"] = command;
    json args = json::array();
    for (int i = 0; i < argc; ++i) args.push_back(argv[i]);
    j["argv"] = args;
    j["started_at"] = utc_now();
    j["consumed"] = json::object();
    j["produced"] = json::object();
  }
  void consumed(const fs::path& p) { j["consumed"][p.string()] = file_content_hash(p); }
  void produced(const fs::path& p) { j["produced"][p.string()] = file_content_hash(p); }
  void write(const fs::path& path) {
    j["finished_at"] = utc_now();
    write_file_bytes(path, j.dump(2) + "\n");
  }
};

json drop_json(const RaindropShape& d) {
  return json{{"cx", d.cx},         {"cy", d.cy},
              {"ra", d.ra},         {"rb", d.rb},
              {"alpha_max", d.alpha_max}, {"refraction_strength", d.refraction_strength},
              {"blur_sigma", d.blur_sigma}, {"tint", d.tint},
              {"haze", d.haze}};
}

void write_region_png(const fs::path& path, const Tensor& region) { write_gray_png(path, region); }

void write_synth_clip(const fs::path& out, const VideoClip& clean, const SynthClip& rain) {
  write_clip_dir(out / "rain", rain.rain);
  write_clip_dir(out / "clean", clean);
  fs::create_directories(out / "mask");
  for (int k = 0; k < clean.size(); ++k)
    write_region_png(out / "mask" / frame_filename(k), drop_region(clean.frames[k], rain.drops[k]));
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string clean_dir, out_dir, bundled;
  std::optional<std::uint64_t> seed;
  int drops = 3, frames = 16, count = 32, size = 64;
  double min_radius = 6.0, max_radius = 14.0, max_speed = 0.0, jitter = 0.0;
  std::optional<double> background_speed;
};

int cmd_synth(const SynthArgs& a, int argc, const char* const* argv) {
  Manifest m("synth", argc, argv);
  const fs::path out = a.out_dir;
  if (a.bundled == "clip") {
    const std::uint64_t seed = resolve_seed(a.seed, 2024);
    const SmokeClip sc = make_smoke_clip(seed, a.frames, 128);
    write_synth_clip(out, sc.clean, sc.rain);
    m.j["seed"] = seed;
    m.j["frames"] = sc.clean.size();
    m.j["background_velocity"] = {sc.vx, sc.vy};
    m.j["drops"] = json::array({drop_json(sc.drop)});
    m.write(out / "manifest.json");
    return kOk;
  }
  if (a.bundled == "stills") {
    const std::uint64_t seed = resolve_seed(a.seed, 5);
    const PairedData d = make_stage1_pairs(a.count, a.size, seed);
    fs::create_directories(out / "rain");
    fs::create_directories(out / "clean");
    for (std::size_t i = 0; i < d.rain.size(); ++i) {
      write_frame_png(out / "rain" / frame_filename(static_cast<int>(i)), d.rain[i]);
      write_frame_png(out / "clean" / frame_filename(static_cast<int>(i)), d.clean[i]);
    }
    m.j["seed"] = seed;
    m.j["frames"] = a.count;
    m.j["size"] = a.size;
    m.write(out / "manifest.json");
    return kOk;
  }
  if (a.clean_dir.empty()) throw CliError(kUsage, "synth needs --clean-dir (or --bundled clip|stills)");
  if (a.max_speed > 0.0 && !a.background_speed)
    throw CliError(kUsage, "--max-speed needs --background-speed (drops must move slower than the background)");

  const std::uint64_t seed = resolve_seed(a.seed, 0);
  VideoClip clean = read_clip_dir(a.clean_dir);
  if (clean.size() < a.frames)
    throw CliError(kDataMismatch, "--frames " + std::to_string(a.frames) + " but " + a.clean_dir + " holds only " +
                                      std::to_string(clean.size()) + " frames");
  clean.frames.resize(static_cast<std::size_t>(a.frames));
  Rng rng(seed);
  DropSampling ds;
  ds.min_radius = a.min_radius;
  ds.max_radius = a.max_radius;
  ds.max_speed = a.max_speed;
  ds.jitter_sigma = a.jitter;
  const auto traj = random_trajectories(a.drops, clean.frames[0].height(), clean.frames[0].width(), ds, rng);
  const double bg = a.background_speed.value_or(std::numeric_limits<double>::infinity());
  const SynthClip rain = synthesize_clip(clean, traj, bg, seed);
  write_synth_clip(out, clean, rain);

  m.j["seed"] = seed;
  m.j["frames"] = a.frames;
  m.j["clean_dir"] = a.clean_dir;
  json drops = json::array();
  for (const DropTrajectory& t : traj) {
    json d = drop_json(t.shape);
    d["vx"] = t.vx;
    d["vy"] = t.vy;
    d["jitter_sigma"] = t.jitter_sigma;
    drops.push_back(d);
  }
  m.j["drops"] = drops;
  m.write(out / "manifest.json");
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  int stage = 0;
  std::string config, out_dir, stage1_ckpt, flow_ckpt, flow_dir;
  std::vector<std::string> data;
  std::optional<int> max_steps;
  std::optional<std::uint64_t> seed;
  bool no_mask = false, no_initialnet = false, no_alignment = false, no_temporal = false;
  int log_every = 10;
};

PairedData read_pairs(const std::vector<std::string>& dirs) {
  PairedData d;
  int idx = 0;
  for (const std::string& dir : dirs) {
    const fs::path rd = fs::path(dir) / "rain", cd = fs::path(dir) / "clean";
    if (!fs::is_directory(rd) || !fs::is_directory(cd))
      throw CliError(kDataMismatch, "stage-1 data " + dir + " needs rain/ and clean/ subdirectories");
    std::set<std::string> rn, cn;
    for (const auto& p : list_frames(rd)) rn.insert(p.filename().string());
    for (const auto& p : list_frames(cd)) cn.insert(p.filename().string());
    if (rn != cn) {
      std::string odd;
      for (const auto& n : rn)
        if (!cn.count(n)) odd += " " + n;
      for (const auto& n : cn)
        if (!rn.count(n)) odd += " " + n;
      throw CliError(kDataMismatch, "unpaired frames in " + dir + ":" + odd);
    }
    for (const std::string& n : rn) {
      d.rain.push_back(read_frame_png(rd / n, idx));
      d.clean.push_back(read_frame_png(cd / n, idx));
      if (d.rain.back().pixels.shape() != d.clean.back().pixels.shape())
        throw CliError(kDataMismatch, "rain and clean " + n + " in " + dir + " differ in size");
      ++idx;
    }
  }
  return d;
}

FlowEstimator make_flow(const TrainConfig& cfg, const std::string& flow_dir) {
  FlowEstimator f(parse_flow_backend(cfg.flow_backend), cfg.seed * 7919 + 11);
  f.finetune_lr = cfg.lr_flow_finetune;
  if (!flow_dir.empty()) f.external_dir = flow_dir;
  return f;
}

int cmd_train(const TrainArgs& a, int argc, const char* const* argv) {
  Manifest m("train", argc, argv);
  TrainConfig cfg;
  if (!a.config.empty()) {
    try {
      cfg = load_config(a.config);
    } catch (const std::invalid_argument& e) {
      throw CliError(kUsage, a.config + ": " + e.what());
    }
    m.consumed(a.config);
  }
  cfg.seed = resolve_seed(a.seed, cfg.seed);
  if (a.no_mask) cfg.use_mask = false;
  if (a.no_initialnet) cfg.use_initial = false;
  if (a.no_alignment) cfg.use_alignment = false;
  if (a.no_temporal) cfg.use_temporal = false;
  if (a.max_steps) (a.stage == 1 ? cfg.steps_stage1 : cfg.steps_stage2) = *a.max_steps;
  validate_config(cfg);

  const fs::path out = a.out_dir;
  fs::create_directories(out);
  std::ofstream loss_log(out / "loss.jsonl", std::ios::binary);
  m.j["stage"] = a.stage;
  m.j["seed"] = cfg.seed;
  m.j["config"] = config_json(cfg);

  if (a.stage == 1) {
    const PairedData data = read_pairs(a.data);
    for (const Frame& f : data.rain)
      if (f.height() < cfg.crop_size || f.width() < cfg.crop_size)
        throw CliError(kShape, "crop_size " + std::to_string(cfg.crop_size) + " exceeds a " +
                                   std::to_string(f.height()) + "x" + std::to_string(f.width()) + " training frame");
    InitialNet net(initial_config(cfg));
    train_stage1(data, net, cfg, [&](const Stage1Step& s) {
      json j{{"step", s.step},   {"pixel", s.pixel}, {"perceptual", s.perceptual}, {"adversarial", s.adversarial},
             {"total", s.total}, {"discriminator", s.discriminator}};
      loss_log << j.dump() << "\n";
      if (s.step % a.log_every == 0) log_info("stage 1 step " + std::to_string(s.step) + " total " + std::to_string(s.total));
    });
    loss_log.close();
    save_stage1(out / "stage1.ckpt", net);
    m.produced(out / "stage1.ckpt");
  } else {
    if (a.stage1_ckpt.empty()) throw CliError(kMissingArtifact, "stage 2 needs --stage1-ckpt (a trained stage-1 checkpoint)");
    if (!fs::exists(a.stage1_ckpt)) throw CliError(kMissingArtifact, "stage-1 checkpoint not found: " + a.stage1_ckpt);
    const InitialNet stage1 = load_stage1(a.stage1_ckpt);
    m.consumed(a.stage1_ckpt);
    const std::string s1_hash = stage1.hash();

    FlowEstimator flow = make_flow(cfg, a.flow_dir);
    if (!a.flow_ckpt.empty()) {
      if (!fs::exists(a.flow_ckpt)) throw CliError(kMissingArtifact, "flow checkpoint not found: " + a.flow_ckpt);
      flow = load_flow(a.flow_ckpt);
      flow.finetune_lr = cfg.lr_flow_finetune;
      if (!a.flow_dir.empty()) flow.external_dir = a.flow_dir;
      m.consumed(a.flow_ckpt);
    }
    std::vector<VideoClip> clips;
    for (const std::string& d : a.data) {
      clips.push_back(read_clip_dir(rain_frames_dir(d), cfg.window_radius));
      const Frame& f = clips.back().frames.at(0);
      if (f.height() < cfg.crop_size || f.width() < cfg.crop_size)
        throw CliError(kShape, "crop_size " + std::to_string(cfg.crop_size) + " exceeds the " +
                                   std::to_string(f.height()) + "x" + std::to_string(f.width()) + " frames of " + d);
    }
    VideoNet net(align_config(cfg), decoder_config(cfg));
    Stage2Trainer trainer(clips, stage1, flow, net, cfg);
    trainer.run(cfg.steps_stage2, [&](int step, const LossReport& r) {
      loss_log << loss_json_line(step, r) << "\n";
      if (step % a.log_every == 0) log_info("stage 2 step " + std::to_string(step) + " total " + std::to_string(r.total));
    });
    loss_log.close();
    if (stage1.hash() != s1_hash) throw std::logic_error("stage-1 parameters changed during stage 2");
    save_stage2(out / "stage2.ckpt", net, stage2_options(cfg));
    save_flow(out / "flow.ckpt", flow);
    m.produced(out / "stage2.ckpt");
    m.produced(out / "flow.ckpt");
    m.j["stage1_hash"] = s1_hash;
  }
  m.produced(out / "loss.jsonl");
  m.write(out / "run_manifest.json");
  return kOk;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string input, stage1_ckpt, stage2_ckpt, flow_ckpt, flow_dir, out_dir;
  bool pad = false, dump = false;
  int jobs = 1;
};

Tensor pad_replicate(const Tensor& t, int h, int w) {
  Tensor out(Shape{t.channels(), h, w});
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = t.at(c, std::min(y, t.height() - 1), std::min(x, t.width() - 1));
  return out;
}

Tensor crop_to(const Tensor& t, int h, int w) {
  Tensor out(Shape{t.channels(), h, w});
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = t.at(c, y, x);
  return out;
}

int padded_side(int v) {
  const int t = std::max(v, kMinFrameSide);
  return (t + kEncoderStride - 1) / kEncoderStride * kEncoderStride;
}

int cmd_infer(const InferArgs& a, int argc, const char* const* argv) {
  Manifest m("infer", argc, argv);
  if (a.jobs < 1) throw CliError(kUsage, "--jobs must be ≥ 1");
  for (const auto& [flag, path] : {std::pair{"--stage1-ckpt", a.stage1_ckpt}, std::pair{"--stage2-ckpt", a.stage2_ckpt}})
    if (!fs::exists(path)) throw CliError(kMissingArtifact, std::string(flag) + " not found: " + path);
  const fs::path flow_path = a.flow_ckpt.empty() ? fs::path(a.stage2_ckpt).parent_path() / "flow.ckpt" : fs::path(a.flow_ckpt);
  if (!fs::exists(flow_path))
    throw CliError(kMissingArtifact, "flow checkpoint not found: " + flow_path.string() + " (pass --flow-ckpt)");

  const InitialNet stage1 = load_stage1(a.stage1_ckpt);
  const VideoNet net = load_stage2(a.stage2_ckpt);
  const Stage2Options opt = load_stage2_options(a.stage2_ckpt);
  FlowEstimator flow = load_flow(flow_path);
  if (!a.flow_dir.empty()) flow.external_dir = a.flow_dir;
  m.consumed(a.stage1_ckpt);
  m.consumed(a.stage2_ckpt);
  m.consumed(flow_path);

  const fs::path in_dir = rain_frames_dir(a.input);
  const auto files = list_frames(in_dir);
  if (files.empty()) throw CliError(kDataMismatch, "no PNG frames in " + in_dir.string());
  VideoClip clip = read_clip_dir(in_dir);
  const int h = clip.frames[0].height(), w = clip.frames[0].width();
  const int ph = padded_side(h), pw = padded_side(w);
  if (ph != h || pw != w) {
    if (!a.pad) {
      try {
        require_network_size(h, w);
      } catch (const std::exception& e) {
        throw CliError(kShape, std::string(e.what()) + "; rerun with --pad to pad automatically");
      }
    }
    for (Frame& f : clip.frames) f.pixels = pad_replicate(f.pixels, ph, pw);
  }
  const ClipRestoration r = restore_clip(clip, stage1, flow, net, opt, a.jobs);

  const fs::path out = a.out_dir;
  fs::create_directories(out / "restored");
  for (int t = 0; t < clip.size(); ++t) {
    const fs::path dst = out / "restored" / files[t].filename();
    write_frame_png(dst, Frame{crop_to(r.output[t].pixels, h, w), t});
  }
  if (a.dump) {
    for (int t = 0; t < clip.size(); ++t) {
      const fs::path d = out / "intermediates" / files[t].stem();
      fs::create_directories(d);
      write_frame_png(d / "initial.png", Frame{crop_to(r.initial[t].pixels, h, w), t});
      const std::vector<int> idx = window_indices(clip.size(), t, clip.window_radius, BoundaryPolicy::reflect);
      for (int k = 0; k < 5; ++k) {
        Tensor region = crop_to(r.masks[t][k].nonrain_weight, h, w);
        for (double& v : region.values()) v = 1.0 - v;
        write_gray_png(d / ("mask_" + std::to_string(k) + "_frame_" + std::to_string(idx[k]) + ".png"), region);
      }
      for (int k = 0; k < 4; ++k) {
        const FlowField& f = r.flows[t][k];
        write_dvfl(d / ("flow_" + std::to_string(f.source_index) + "_to_" + std::to_string(t) + "_slot_" +
                        std::to_string(kNeighborSlots[k]) + ".dvfl"),
                   FlowField{crop_to(f.vectors, h, w), f.source_index, f.target_index});
      }
    }
  }
  m.j["frames"] = clip.size();
  std::vector<int> reflected;
  for (int t = 0; t < clip.size(); ++t) {
    bool refl = false;
    window_indices(clip.size(), t, clip.window_radius, BoundaryPolicy::reflect, &refl);
    if (refl) reflected.push_back(t);
  }
  m.j["reflected_frames"] = reflected;
  m.j["padded"] = ph != h || pw != w;
  m.j["options"] = {{"use_initial", opt.use_initial},
                    {"use_mask", opt.use_mask},
                    {"use_alignment", opt.use_alignment},
                    {"residual", opt.residual},
                    {"tau", opt.tau}};
  m.write(out / "run_manifest.json");
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::vector<std::string> restored, gt, mask_dir, rain_dir, name;
  std::string out;
  double tau = 0.05;
  int jobs = 1;
};

int cmd_eval(const EvalArgs& a, int argc, const char* const* argv) {
  Manifest m("eval", argc, argv);
  const std::size_t n = a.restored.size();
  if (a.gt.size() != n) throw CliError(kUsage, "--restored and --gt must be given the same number of times");
  if (!a.mask_dir.empty() && a.mask_dir.size() != n) throw CliError(kUsage, "--mask-dir must be given once per video");
  if (!a.rain_dir.empty() && a.rain_dir.size() != n) throw CliError(kUsage, "--rain-dir must be given once per video");
  if (!a.name.empty() && a.name.size() != n) throw CliError(kUsage, "--name must be given once per video");
  if (a.jobs < 1) throw CliError(kUsage, "--jobs must be ≥ 1");

  const FlowEstimator flow;
  std::vector<EvalReport> reports(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      EvalInputs in;
      in.restored_dir = a.restored[i];
      in.gt_dir = a.gt[i];
      if (!a.mask_dir.empty()) in.mask_dir = a.mask_dir[i];
      if (!a.rain_dir.empty()) in.rain_dir = a.rain_dir[i];
      in.video_name = a.name.empty() ? fs::path(a.gt[i]).lexically_normal().parent_path().filename().string() : a.name[i];
      if (in.video_name.empty()) in.video_name = "video" + std::to_string(i);
      in.tau = a.tau;
      try {
        reports[i] = evaluate_method(in, flow);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < std::min<int>(a.jobs, static_cast<int>(n)); ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < n; ++i)
    if (!errors[i].empty()) throw CliError(kDataMismatch, a.restored[i] + " vs " + a.gt[i] + ": " + errors[i]);

  const fs::path out = a.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_file_bytes(out, report_csv(reports));
  json sources = json::array();
  for (const EvalReport& r : reports) sources.push_back({{"video", r.video}, {"mask_source", to_string(r.mask_source)}});
  m.j["videos"] = sources;
  m.produced(out);
  fs::path mpath = out;
  mpath.replace_extension(".manifest.json");
  m.write(mpath);
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Video raindrop removal: synthetic data, two-stage training, inference and evaluation", "dropvid"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Composite synthetic raindrops onto clean frames");
  synth->add_option("--clean-dir", sa.clean_dir, "Directory of clean PNG frames")->check(CLI::ExistingDirectory);
  synth->add_option("--out-dir", sa.out_dir, "Clip directory to write (rain/, clean/, mask/, manifest.json)")->required();
  synth->add_option("--bundled", sa.bundled, "Write a bundled toy set instead of reading --clean-dir")
      ->check(CLI::IsMember({"clip", "stills"}))
      ->excludes(synth->get_option("--clean-dir"));
  synth->add_option("--seed", sa.seed, "Random seed (default: $DROPVID_SEED, then 0)");
  synth->add_option("--drops", sa.drops, "Number of drops")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--frames", sa.frames, "Frames to use")->capture_default_str()->check(CLI::Range(2, 1 << 20));
  synth->add_option("--count", sa.count, "Stills to write with --bundled stills")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--size", sa.size, "Side of bundled stills")->capture_default_str()->check(CLI::Range(kMinFrameSide, 4096));
  synth->add_option("--min-radius", sa.min_radius)->capture_default_str()->check(CLI::Range(3.0, 80.0));
  synth->add_option("--max-radius", sa.max_radius)->capture_default_str()->check(CLI::Range(3.0, 80.0));
  synth->add_option("--max-speed", sa.max_speed, "Largest drop speed, px/frame")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--background-speed", sa.background_speed, "Apparent background speed, px/frame")
      ->check(CLI::PositiveNumber);
  synth->add_option("--jitter", sa.jitter, "Drop position jitter sigma, px")->capture_default_str()->check(CLI::NonNegativeNumber);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train stage 1 (supervised) or stage 2 (self-supervised)");
  train->add_option("--stage", ta.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--config", ta.config, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--data", ta.data, "Stage 1: dirs with rain/ and clean/. Stage 2: clip dirs")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--out-dir", ta.out_dir, "Where checkpoints, loss.jsonl and run_manifest.json go")->required();
  train->add_option("--stage1-ckpt", ta.stage1_ckpt, "Trained stage-1 checkpoint (stage 2)");
  train->add_option("--flow-ckpt", ta.flow_ckpt, "Flow checkpoint to start from (stage 2)");
  train->add_option("--flow-dir", ta.flow_dir, "Precomputed DVFL flows for the external backend");
  train->add_option("--max-steps", ta.max_steps, "Override the configured step count")->check(CLI::NonNegativeNumber);
  train->add_option("--seed", ta.seed, "Random seed (default: $DROPVID_SEED, then the config)");
  train->add_option("--log-every", ta.log_every)->capture_default_str()->check(CLI::PositiveNumber);
  train->add_flag("--no-mask", ta.no_mask, "Ablation: unmasked losses");
  train->add_flag("--no-initialnet", ta.no_initialnet, "Ablation: rainy frames replace stage-1 results");
  train->add_flag("--no-alignment", ta.no_alignment, "Ablation: no flow warping, zero offsets");
  train->add_flag("--no-temporal", ta.no_temporal, "Ablation: drop the temporal consistency loss");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Restore a frame directory");
  infer->add_option("--input", ia.input, "Frame directory (or clip dir with rain/)")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--stage1-ckpt", ia.stage1_ckpt)->required();
  infer->add_option("--stage2-ckpt", ia.stage2_ckpt)->required();
  infer->add_option("--flow-ckpt", ia.flow_ckpt, "Default: flow.ckpt next to the stage-2 checkpoint");
  infer->add_option("--flow-dir", ia.flow_dir, "Precomputed DVFL flows for the external backend");
  infer->add_option("--out-dir", ia.out_dir)->required();
  infer->add_flag("--pad", ia.pad, "Replicate-pad frames to a valid size and crop results back");
  infer->add_flag("--dump-intermediates", ia.dump, "Write S_t, the 5 masks and 4 flows per frame");
  infer->add_option("--jobs", ia.jobs, "Parallel frames")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score restored frames against ground truth");
  eval->add_option("--restored", ea.restored, "Restored frame dir, once per video")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--gt", ea.gt, "Ground-truth frame dir, once per video")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--mask-dir", ea.mask_dir, "Ground-truth drop masks (gray PNG), once per video")->check(CLI::ExistingDirectory);
  eval->add_option("--rain-dir", ea.rain_dir, "Rainy inputs for evidence masks, once per video")->check(CLI::ExistingDirectory);
  eval->add_option("--name", ea.name, "Video name, once per video");
  eval->add_option("--out", ea.out, "CSV report path")->required();
  eval->add_option("--tau", ea.tau)->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--jobs", ea.jobs, "Parallel videos")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* shown = &app;
    for (const CLI::App* s : app.get_subcommands()) shown = s;
    std::cout << shown->help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    return kOk;
  } catch (const CLI::ParseError& e) {
    const CLI::App* shown = &app;
    for (const CLI::App* s : app.get_subcommands()) shown = s;
    std::cerr << "error: " << e.what() << "\n\n" << shown->help();
    return kUsage;
  }
  set_log_quiet(quiet);

  try {
    if (synth->parsed()) return cmd_synth(sa, argc, argv);
    if (train->parsed()) return cmd_train(ta, argc, argv);
    if (infer->parsed()) return cmd_infer(ia, argc, argv);
    if (eval->parsed()) return cmd_eval(ea, argc, argv);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.code() == kUsage) {
      const CLI::App* shown = &app;
      for (const CLI::App* s : app.get_subcommands()) shown = s;
      std::cerr << "\n" << shown->help();
    }
    return e.code();
  } catch (const FlowBackendUnavailable& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace dropvid::cli
