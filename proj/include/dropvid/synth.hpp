#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dropvid/core_types.hpp"
#include "dropvid/nn.hpp"

namespace dropvid {

// Elliptical adherent drop. Pixel centers sit on integer coordinates.
struct RaindropShape {
  double cx = 0.0;
  double cy = 0.0;
  double ra = 8.0;  // x radius, [3, 80]
  double rb = 8.0;  // y radius, [3, 80]
  double alpha_max = 0.9;
  // Interior samples the clean frame over the drop region scaled by
  // 1/refraction_strength, flipped vertically. 0 = flat tint, no lens.
  double refraction_strength = 0.4;
  double blur_sigma = 1.0;
  double tint = 0.85;
  double haze = 0.15;  // interior = (1 − haze)·refracted + haze·tint
};

// Opacity at (x, y): alpha_max inside the ellipse, a Gaussian falloff of
// width blur_sigma outside it, exactly 0 beyond 2·blur_sigma.
double drop_alpha(const RaindropShape& d, double x, double y);

void validate_drop(const RaindropShape& d);

struct DropTrajectory {
  RaindropShape shape;
  double vx = 0.0;
  double vy = 0.0;
  double jitter_sigma = 0.0;
};

struct CompositeOptions {
  double tau = 0.05;
  double noise = 0.0;  // uniform sensor noise amplitude inside drop support
};

struct Composite {
  Frame frame;
  RaindropMask mask;  // ground truth: evidence = channel-mean |rain − clean|
  Tensor alpha;       // 1×H×W total opacity
};

Composite composite_drops(const Frame& clean, std::span<const RaindropShape> drops, std::uint64_t seed,
                          const CompositeOptions& opt = {});

struct SynthClip {
  VideoClip rain;
  std::vector<RaindropMask> masks;
  std::vector<std::vector<RaindropShape>> drops;  // per frame, after motion
};

// Drops must move strictly slower than background_speed (px/frame).
SynthClip synthesize_clip(const VideoClip& clean, std::span<const DropTrajectory> trajectories,
                          double background_speed, std::uint64_t seed, const CompositeOptions& opt = {});

struct DropSampling {
  double min_radius = 6.0;
  double max_radius = 14.0;
  double max_speed = 0.0;
  double jitter_sigma = 0.0;
};

std::vector<DropTrajectory> random_trajectories(int count, int height, int width, const DropSampling& s, Rng& rng);

// Procedural textured scene translating by (vx, vy) px per frame:
// frame k shows f(x − vx·k, y − vy·k) for a fixed smooth random field f.
VideoClip make_translating_scene(int frames, int height, int width, double vx, double vy, std::uint64_t seed);

}  // namespace dropvid
