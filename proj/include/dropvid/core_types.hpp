#pragma once

#include <string>
#include <vector>

#include "dropvid/tensor.hpp"

namespace dropvid {

// Encoder stride shared by every stage-2 feature map.
inline constexpr int kEncoderStride = 4;
inline constexpr int kMinFrameSide = 64;

// An image tensor (C×H×W, values in [0,1]) at time step `time_index`.
// Holds the rainy input, the stage-1 result and the stage-2 output alike.
struct Frame {
  Tensor pixels;
  int time_index = 0;

  int channels() const { return pixels.channels(); }
  int height() const { return pixels.height(); }
  int width() const { return pixels.width(); }
};

// Builds a frame, rejecting non-C×H×W tensors and non-finite values.
Frame make_frame(Tensor pixels, int time_index = 0);

// Clamps every value into [0,1]. Throws on non-finite input.
Frame clamp_frame(const Frame& f);

// Throws unless H and W are ≥ kMinFrameSide and divisible by kEncoderStride.
// The message carries the padding needed to comply.
void require_network_size(int height, int width);

struct VideoClip {
  std::vector<Frame> frames;
  int window_radius = 2;

  int size() const { return static_cast<int>(frames.size()); }
  int window_length() const { return 2 * window_radius + 1; }
};

// Throws unless frames are unit-spaced in time and share one shape.
void validate_clip(const VideoClip& clip);

enum class MaskMode { hard, soft };

// Per-pixel raindrop evidence and the derived non-raindrop weight (1 = use
// the pixel in a loss, 0 = raindrop).
struct RaindropMask {
  Tensor evidence;        // 1×H×W, ≥ 0
  Tensor nonrain_weight;  // 1×H×W, in [0,1]
  double threshold = 0.05;
};

// Weight from evidence. Hard: 1 where evidence < τ, else 0. Soft: a linear
// ramp 1 − evidence/τ clipped at 0, which still gives 1 where evidence = 0.
RaindropMask mask_from_evidence(Tensor evidence, double tau, MaskMode mode = MaskMode::hard);

// All-ones weight (used when masking is disabled).
RaindropMask full_mask(int height, int width);

// Dense displacement from frame `source_index` towards `target_index`:
// warp(img_source, flow)(p) = img_source(p + flow(p)) is aligned to the target.
struct FlowField {
  Tensor vectors;  // 2×H×W, channel 0 = x, channel 1 = y, pixels
  int source_index = 0;
  int target_index = 0;
};

// Throws if non-finite or any vector exceeds max(H, W) in length.
void validate_flow(const FlowField& f);

struct FeatureMap {
  Tensor activations;  // C×(H/r)×(W/r)
  int time_index = 0;
};

struct OffsetField {
  Tensor offsets;  // 2K×(H/r)×(W/r), feature-grid pixels
};

struct LossReport {
  double flow = 0.0;
  double mask_ct = 0.0;
  double mask_cl = 0.0;
  double temp = 0.0;
  double lambda_t = 0.5;
  double total = 0.0;
};

// flow + mask_ct + mask_cl + lambda_t·temp.
double loss_total(const LossReport& r);

}  // namespace dropvid
