#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dropvid/archive.hpp"
#include "dropvid/cli.hpp"
#include "dropvid/eval.hpp"
#include "dropvid/image_io.hpp"
#include "dropvid/synth.hpp"
#include "dropvid/training.hpp"

using namespace dropvid;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string err;
};

Result dv(std::vector<std::string> args) {
  args.insert(args.begin(), "dropvid");
  args.insert(args.begin() + 1, "-q");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream err;
  std::streambuf* old = std::cerr.rdbuf(err.rdbuf());
  const int code = cli::run(static_cast<int>(argv.size()), argv.data());
  std::cerr.rdbuf(old);
  return {code, err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dropvid_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Filename → bytes for every file under dir.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file_bytes(e.path());
  return out;
}

void write_scene(const fs::path& dir, int frames, int h, int w) {
  write_clip_dir(dir, make_translating_scene(frames, h, w, 1.0, 0.5, 44));
}

const char* kTinyConf =
    "crop_size = 64\nbatch_size = 1\nlr_stage1 = 0.001\nlr_stage2 = 0.001\nsteps_stage1 = 2\nsteps_stage2 = 2\n"
    "feature_channels = 8\ninit_width = 8\ninit_attention_width = 4\nseed = 3\n";

// Shared trained artifacts: a synthesized 8-frame clip and tiny checkpoints.
struct Fixture {
  fs::path root, clean, clip, conf, s1, s2;
  ~Fixture() { fs::remove_all(root); }
  Fixture() {
    root = scratch("fixture");
    clean = root / "clean_src";
    write_scene(clean, 8, 64, 64);
    clip = root / "clip";
    conf = root / "tiny.conf";
    std::ofstream(conf) << kTinyConf;
    REQUIRE(dv({"synth", "--clean-dir", clean.string(), "--out-dir", clip.string(), "--seed", "7", "--drops", "2",
                "--frames", "8"})
                .code == 0);
    s1 = root / "s1";
    s2 = root / "s2";
    REQUIRE(dv({"train", "--stage", "1", "--config", conf.string(), "--data", clip.string(), "--out-dir", s1.string()})
                .code == 0);
    REQUIRE(dv({"train", "--stage", "2", "--config", conf.string(), "--data", clip.string(), "--stage1-ckpt",
                (s1 / "stage1.ckpt").string(), "--out-dir", s2.string()})
                .code == 0);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

json read_json(const fs::path& p) { return json::parse(read_file_bytes(p)); }

}  // namespace

TEST_CASE("synth is deterministic and --drops 0 copies the clean frames") {
  const fs::path root = scratch("synth");
  write_scene(root / "clean", 16, 64, 64);
  const std::vector<std::string> base{"synth", "--clean-dir", (root / "clean").string(), "--seed", "7", "--drops", "5",
                                      "--frames", "16"};
  auto with_out = [&](const std::string& o) {
    auto a = base;
    a.push_back("--out-dir");
    a.push_back((root / o).string());
    return a;
  };
  REQUIRE(dv(with_out("a")).code == 0);
  REQUIRE(dv(with_out("b")).code == 0);
  for (const char* sub : {"rain", "clean", "mask"}) CHECK(tree(root / "a" / sub) == tree(root / "b" / sub));
  CHECK(tree(root / "a" / "rain").size() == 16);
  CHECK(tree(root / "a" / "rain") != tree(root / "a" / "clean"));
  const json m = read_json(root / "a" / "manifest.json");
  CHECK(m["seed"] == 7);
  CHECK(m["drops"].size() == 5);

  REQUIRE(dv({"synth", "--clean-dir", (root / "clean").string(), "--out-dir", (root / "z").string(), "--drops", "0",
              "--frames", "16"})
              .code == 0);
  CHECK(tree(root / "z" / "rain") == tree(root / "z" / "clean"));
  CHECK(tree(root / "z" / "rain") == tree(root / "clean"));
  fs::remove_all(root);
}

TEST_CASE("synth usage errors") {
  const fs::path root = scratch("synth_err");
  Result r = dv({"synth", "--clean-dir", (root / "nope").string(), "--out-dir", (root / "o").string()});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("--clean-dir") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = dv({"synth", "--out-dir", (root / "o").string()});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("--clean-dir") != std::string::npos);
  write_scene(root / "short", 4, 64, 64);
  CHECK(dv({"synth", "--clean-dir", (root / "short").string(), "--out-dir", (root / "o").string(), "--frames", "8"})
            .code == cli::kDataMismatch);
  CHECK(dv({"frobnicate"}).code == cli::kUsage);
  CHECK(dv({}).code == cli::kUsage);
  fs::remove_all(root);
}

TEST_CASE("DROPVID_SEED is the seed fallback") {
  const fs::path root = scratch("seed");
  write_scene(root / "clean", 4, 64, 64);
  const std::string clean = (root / "clean").string();
  REQUIRE(dv({"synth", "--clean-dir", clean, "--out-dir", (root / "flag").string(), "--seed", "11", "--frames", "4"})
              .code == 0);
  ::setenv("DROPVID_SEED", "11", 1);
  REQUIRE(dv({"synth", "--clean-dir", clean, "--out-dir", (root / "env").string(), "--frames", "4"}).code == 0);
  ::setenv("DROPVID_SEED", "eleven", 1);
  CHECK(dv({"synth", "--clean-dir", clean, "--out-dir", (root / "bad").string(), "--frames", "4"}).code ==
        cli::kUsage);
  ::unsetenv("DROPVID_SEED");
  REQUIRE(dv({"synth", "--clean-dir", clean, "--out-dir", (root / "none").string(), "--frames", "4"}).code == 0);
  CHECK(tree(root / "flag" / "rain") == tree(root / "env" / "rain"));
  CHECK(tree(root / "flag" / "rain") != tree(root / "none" / "rain"));
  CHECK(read_json(root / "env" / "manifest.json")["seed"] == 11);
  fs::remove_all(root);
}

TEST_CASE("train writes checkpoints, loss logs and manifests") {
  Fixture& f = fixture();
  CHECK(fs::exists(f.s1 / "stage1.ckpt"));
  const json m1 = read_json(f.s1 / "run_manifest.json");
  CHECK(m1["command"] == "train");
  CHECK(m1["seed"] == 3);
  CHECK(m1["config"]["crop_size"] == "64");
  CHECK(m1["produced"][(f.s1 / "stage1.ckpt").string()] == file_content_hash(f.s1 / "stage1.ckpt"));
  CHECK(m1.contains("started_at"));
  std::ifstream log(f.s1 / "loss.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const json j = json::parse(line);
    CHECK(j.contains("pixel"));
    ++lines;
  }
  CHECK(lines == 2);

  for (const char* name : {"stage2.ckpt", "flow.ckpt", "loss.jsonl", "run_manifest.json"})
    CHECK(fs::exists(f.s2 / name));
  const json m2 = read_json(f.s2 / "run_manifest.json");
  CHECK(m2["consumed"][(f.s1 / "stage1.ckpt").string()] == file_content_hash(f.s1 / "stage1.ckpt"));
  CHECK(m2["stage1_hash"] == load_stage1(f.s1 / "stage1.ckpt").hash());
}

TEST_CASE("train error codes and --max-steps 0") {
  Fixture& f = fixture();
  const fs::path root = scratch("train_err");
  Result r = dv({"train", "--stage", "2", "--config", f.conf.string(), "--data", f.clip.string(), "--out-dir",
                 (root / "x").string()});
  CHECK(r.code == cli::kMissingArtifact);
  CHECK(r.err.find("--stage1-ckpt") != std::string::npos);
  CHECK(dv({"train", "--stage", "2", "--config", f.conf.string(), "--data", f.clip.string(), "--stage1-ckpt",
            (root / "none.ckpt").string(), "--out-dir", (root / "x").string()})
            .code == cli::kMissingArtifact);

  fs::create_directories(root / "unpaired");
  fs::copy(f.clip / "rain", root / "unpaired" / "rain", fs::copy_options::recursive);
  fs::copy(f.clip / "clean", root / "unpaired" / "clean", fs::copy_options::recursive);
  fs::remove(root / "unpaired" / "clean" / frame_filename(3));
  r = dv({"train", "--stage", "1", "--config", f.conf.string(), "--data", (root / "unpaired").string(), "--out-dir",
          (root / "u").string()});
  CHECK(r.code == cli::kDataMismatch);
  CHECK(r.err.find(frame_filename(3)) != std::string::npos);

  std::ofstream(root / "big.conf") << kTinyConf << "crop_size = 128\n";
  CHECK(dv({"train", "--stage", "1", "--config", (root / "big.conf").string(), "--data", f.clip.string(), "--out-dir",
            (root / "b").string()})
            .code == cli::kShape);
  std::ofstream(root / "bad.conf") << "crop_sise = 64\n";
  r = dv({"train", "--stage", "1", "--config", (root / "bad.conf").string(), "--data", f.clip.string(), "--out-dir",
          (root / "b").string()});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("line 1") != std::string::npos);

  REQUIRE(dv({"train", "--stage", "2", "--config", f.conf.string(), "--data", f.clip.string(), "--stage1-ckpt",
              (f.s1 / "stage1.ckpt").string(), "--out-dir", (root / "zero").string(), "--max-steps", "0"})
              .code == 0);
  const TrainConfig cfg = load_config(f.conf);
  save_stage2(root / "fresh.ckpt", VideoNet(align_config(cfg), decoder_config(cfg)), stage2_options(cfg));
  CHECK(read_file_bytes(root / "zero" / "stage2.ckpt") == read_file_bytes(root / "fresh.ckpt"));
  CHECK(read_file_bytes(root / "zero" / "loss.jsonl").empty());
  fs::remove_all(root);
}

TEST_CASE("infer is reproducible and dumps every intermediate") {
  Fixture& f = fixture();
  const fs::path root = scratch("infer");
  auto infer = [&](const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> a{"infer", "--input", f.clip.string(), "--stage1-ckpt", (f.s1 / "stage1.ckpt").string(),
                               "--stage2-ckpt", (f.s2 / "stage2.ckpt").string(), "--out-dir", (root / out).string()};
    a.insert(a.end(), extra.begin(), extra.end());
    return dv(a);
  };
  REQUIRE(infer("a", {"--dump-intermediates"}).code == 0);
  REQUIRE(infer("b", {"--jobs", "2"}).code == 0);
  CHECK(tree(root / "a" / "restored") == tree(root / "b" / "restored"));
  CHECK(tree(root / "a" / "restored").size() == 8);
  for (const auto& p : list_frames(f.clip / "rain")) CHECK(fs::exists(root / "a" / "restored" / p.filename()));

  int dirs = 0;
  for (const auto& e : fs::directory_iterator(root / "a" / "intermediates")) {
    ++dirs;
    int masks = 0, flows = 0, initial = 0;
    for (const auto& g : fs::directory_iterator(e.path())) {
      const std::string n = g.path().filename().string();
      masks += n.rfind("mask_", 0) == 0;
      flows += g.path().extension() == ".dvfl";
      initial += n == "initial.png";
    }
    CHECK(masks == 5);
    CHECK(flows == 4);
    CHECK(initial == 1);
  }
  CHECK(dirs == 8);
  const FlowField fl = read_dvfl(root / "a" / "intermediates" / "frame_000004" / "flow_2_to_4_slot_0.dvfl");
  CHECK(fl.vectors.shape() == Shape{2, 64, 64});
  CHECK(fs::exists(root / "a" / "intermediates" / "frame_000000" / "mask_0_frame_2.png"));

  const json m = read_json(root / "a" / "run_manifest.json");
  CHECK(m["frames"] == 8);
  CHECK(m["reflected_frames"] == json::array({0, 1, 6, 7}));

  CHECK(dv({"infer", "--input", f.clip.string(), "--stage1-ckpt", (root / "none").string(), "--stage2-ckpt",
            (f.s2 / "stage2.ckpt").string(), "--out-dir", (root / "c").string()})
            .code == cli::kMissingArtifact);
  fs::remove_all(root);
}

TEST_CASE("infer rejects sizes off the stride unless --pad") {
  Fixture& f = fixture();
  const fs::path root = scratch("pad");
  write_scene(root / "odd", 5, 66, 70);
  const std::vector<std::string> a{"infer", "--input", (root / "odd").string(), "--stage1-ckpt",
                                   (f.s1 / "stage1.ckpt").string(), "--stage2-ckpt", (f.s2 / "stage2.ckpt").string(),
                                   "--out-dir", (root / "out").string()};
  const Result r = dv(a);
  CHECK(r.code == cli::kShape);
  CHECK(r.err.find("68x72") != std::string::npos);
  CHECK(r.err.find("--pad") != std::string::npos);
  auto padded = a;
  padded.push_back("--pad");
  REQUIRE(dv(padded).code == 0);
  const auto outs = list_frames(root / "out" / "restored");
  REQUIRE(outs.size() == 5);
  CHECK(read_frame_png(outs[0]).pixels.shape() == Shape{3, 66, 70});
  fs::remove_all(root);
}

TEST_CASE("eval reports, mask sources and mismatches") {
  Fixture& f = fixture();
  const fs::path root = scratch("eval");
  const std::string gt = (f.clip / "clean").string();
  REQUIRE(dv({"eval", "--restored", gt, "--gt", gt, "--out", (root / "self.csv").string()}).code == 0);
  const std::string text = read_file_bytes(root / "self.csv");
  CHECK(text.rfind("video,psnr,ssim,masked_psnr,temporal_warp_error\n", 0) == 0);
  const auto rows = parse_report_csv(text);
  REQUIRE(rows.size() == 2);
  for (const auto& row : rows) {
    CHECK(row.ssim == 1.0);
    CHECK(std::isinf(row.psnr));
  }
  CHECK(rows.back().video == "mean");
  CHECK(read_json(root / "self.manifest.json")["videos"][0]["mask_source"] == "none");

  const std::string rain = (f.clip / "rain").string();
  REQUIRE(dv({"eval", "--restored", rain, "--gt", gt, "--mask-dir", (f.clip / "mask").string(), "--name", "toy",
              "--out", (root / "rain.csv").string()})
              .code == 0);
  const auto rr = parse_report_csv(read_file_bytes(root / "rain.csv"));
  CHECK(rr[0].video == "toy");
  CHECK(std::isfinite(rr[0].masked_psnr));
  CHECK(rr[0].masked_psnr < rr[0].psnr);
  CHECK(read_json(root / "rain.manifest.json")["videos"][0]["mask_source"] == "ground-truth");

  fs::create_directories(root / "short");
  for (const auto& p : list_frames(f.clip / "clean"))
    if (p.filename() != frame_filename(5)) fs::copy(p, root / "short" / p.filename());
  const Result r = dv({"eval", "--restored", (root / "short").string(), "--gt", gt, "--out", (root / "x.csv").string()});
  CHECK(r.code == cli::kDataMismatch);
  CHECK(r.err.find(frame_filename(5)) != std::string::npos);
  CHECK(dv({"eval", "--restored", gt, "--gt", gt, "--gt", gt, "--out", (root / "x.csv").string()}).code ==
        cli::kUsage);
  fs::remove_all(root);
}

TEST_CASE("ablation script refuses missing arguments") {
  const std::string script = std::string(DROPVID_SOURCE_DIR) + "/tools/ablation_matrix.sh";
  REQUIRE(fs::exists(script));
  const int status = std::system(("bash " + script + " >/dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(status) == 2);
}
