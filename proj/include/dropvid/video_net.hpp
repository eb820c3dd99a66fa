#pragma once

#include <map>
#include <tuple>
#include <vector>

#include "dropvid/feature_align.hpp"
#include "dropvid/flow.hpp"
#include "dropvid/initial_net.hpp"

namespace dropvid {

struct DecoderConfig {
  int channels = 64;  // must match the encoder's C_f, divisible by 4
  double head_init_scale = 1e-2;
  std::uint64_t seed = 5;
};

// Temporal 3D conv stack (extent 3 then 2 over the four neighbor maps), two
// conv + pixel-shuffle ×2 stages back to full resolution, and a 3-channel head.
class Decoder {
public:
  explicit Decoder(const DecoderConfig& cfg = {});

  const DecoderConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // Pre-squash output, 3×H×W.
  Var head(const std::vector<Var>& aligned) const;
  // aligned: t−2, t−1, t+1, t+2. With `base` (3×H×W in [0,1]) the output is
  // sigmoid(head + logit(base)); otherwise sigmoid(head).
  Var decode(const std::vector<Var>& aligned, const Var& base = Var()) const;
  // Checks count, shapes and time indices (t−2, t−1, t+1, t+2).
  Frame decode(const std::vector<FeatureMap>& aligned, int t) const;

private:
  DecoderConfig cfg_;
  ParamSet params_;
  Conv2d t3_, t2_, up1_, up2_, out_;
};

enum class BoundaryPolicy { strict, reflect };
// Flow pairing: (S_i, I_t) by default, or (S_i, S_t).
enum class FlowPair { initial_to_rain, initial_to_initial };

struct Stage2Options {
  bool use_initial = true;    // false: raw I_i replaces S_i
  bool use_mask = true;       // false: nonrain_weight ≡ 1
  bool use_alignment = true;  // false: no flow warp, offsets ≡ 0
  bool residual = true;
  MaskMode mask_mode = MaskMode::hard;
  double tau = 0.05;
  FlowPair flow_pair = FlowPair::initial_to_rain;
  BoundaryPolicy boundary = BoundaryPolicy::strict;
};

// Clip indices of the window around t (t−s..t+s). Strict policy throws for
// windows leaving the clip; reflect mirrors them back inside.
std::vector<int> window_indices(int clip_size, int t, int radius, BoundaryPolicy policy, bool* reflected = nullptr);

// Stage-1 results for a whole clip (stage 1 is frozen in stage 2, so these
// are computed once).
struct Stage1Results {
  std::vector<Frame> initial;
  std::vector<RaindropMask> masks;
};

Stage1Results run_stage1(const VideoClip& clip, const InitialNet& net, const Stage2Options& opt);

// Memoizes the non-trainable part of flow estimates for one clip, keyed by
// (source index, target index, pair kind).
class FlowCache {
public:
  explicit FlowCache(const FlowEstimator& est) : est_(&est) {}
  const Tensor& base(const Frame& source, const Frame& target, int kind);
  std::size_t size() const { return cache_.size(); }

private:
  const FlowEstimator* est_;
  std::map<std::tuple<int, int, int>, Tensor> cache_;
};

// Everything one stage-2 forward (plus its losses) reads, cropped.
struct Window {
  int center = 0;
  std::vector<int> indices;  // 5 clip indices
  bool reflected = false;
  std::vector<Frame> rain;          // I_i, window order
  std::vector<Frame> initial;       // S_i (or I_i without stage 1)
  std::vector<RaindropMask> masks;  // 5
  std::vector<Tensor> base_to_center;    // F_{i→t} base flows, 4 neighbors
  std::vector<Tensor> base_from_center;  // F_{t→i} base flows, 4 neighbors
};

struct CropRect {
  int y0 = 0, x0 = 0, height = 0, width = 0;  // height 0 = whole frame
};

Window make_window(const VideoClip& clip, const Stage1Results& s1, FlowCache& flows, int t, const Stage2Options& opt,
                   const CropRect& crop = {});

// Neighbor slots of a 5-frame window: 0, 1, 3, 4.
inline constexpr int kNeighborSlots[4] = {0, 1, 3, 4};

struct ForwardResult {
  Var output;                      // O_t
  std::vector<Var> flows_to_center;  // F_{i→t}
  std::vector<Var> warped;         // S_{i→t}
  std::vector<Var> neighbor_features;
  Var center_features;
  std::vector<Var> offsets;
  std::vector<Var> aligned;
  Var base;
};

class VideoNet {
public:
  VideoNet(const AlignConfig& align = {}, const DecoderConfig& dec = {});

  AlignEncoder& align() { return align_; }
  const AlignEncoder& align() const { return align_; }
  Decoder& decoder() { return dec_; }
  const Decoder& decoder() const { return dec_; }

  ForwardResult forward(const Window& w, const FlowEstimator& flow, const Stage2Options& opt) const;

  // Encoder + decoder under "align." and "decoder.".
  void save_to(Archive& a) const;
  void load_from(const Archive& a);
  std::string hash() const;

private:
  AlignEncoder align_;
  Decoder dec_;
};

struct VideoForward {
  Frame output;
  std::vector<RaindropMask> masks;  // 5
  std::vector<FlowField> flows;     // 4, F_{i→t}
  bool reflected = false;
};

VideoForward videonet_forward(const VideoClip& clip, int t, const InitialNet& initial, const FlowEstimator& flow,
                              const VideoNet& net, const Stage2Options& opt = {});

// Every frame of a clip, boundary windows reflected. Stage 1 and base flows
// run once per clip; the per-frame forwards spread over `jobs` threads.
struct ClipRestoration {
  std::vector<Frame> initial;                     // S_t
  std::vector<Frame> output;                      // O_t
  std::vector<std::vector<RaindropMask>> masks;   // 5 per frame
  std::vector<std::vector<FlowField>> flows;      // 4 per frame, F_{i→t}
};

ClipRestoration restore_clip(const VideoClip& clip, const InitialNet& initial, const FlowEstimator& flow,
                             const VideoNet& net, Stage2Options opt = {}, int jobs = 1);

}  // namespace dropvid
