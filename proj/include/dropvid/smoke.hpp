#pragma once

#include "dropvid/eval.hpp"
#include "dropvid/synth.hpp"
#include "dropvid/training.hpp"

namespace dropvid {

// Bundled toy clip: a textured background translating at (vx, vy) px/frame
// under one static drop.
struct SmokeClip {
  VideoClip clean;
  SynthClip rain;
  RaindropShape drop;
  double vx = 4.0;
  double vy = 1.5;
};

SmokeClip make_smoke_clip(std::uint64_t seed = 2024, int frames = 16, int size = 128);

// Independent (rain, clean) stills with 2–5 random drops each, from scenes
// seeded apart from the smoke clip.
PairedData make_stage1_pairs(int count, int size, std::uint64_t seed);

// Ground-truth drop-covered region of a synthetic frame (alpha > 0), 1×H×W.
Tensor drop_region(const Frame& clean, std::span<const RaindropShape> drops);

struct SmokeScores {
  EvalReport initial;  // S_t
  EvalReport video;    // O_t
};

// Scores S_t and O_t on frames radius..n−1−radius against the clean clip,
// masked PSNR over the true drop region.
SmokeScores score_smoke(const SmokeClip& sc, const InitialNet& initial, const FlowEstimator& flow, const VideoNet& net,
                        const Stage2Options& opt = {});

}  // namespace dropvid
