#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "dropvid/core_types.hpp"
#include "dropvid/nn.hpp"

namespace dropvid {

enum class FlowBackend { toy, external };

FlowBackend parse_flow_backend(const std::string& s);
std::string to_string(FlowBackend b);

class FlowBackendUnavailable : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct PyramidSettings {
  int levels = 4;
  int iterations = 10;
  double window_sigma = 6.0;  // Gaussian weighting of the local least-squares window
  double regularization = 1e-3;
  double smooth_sigma = 3.0;  // flow smoothing after each level
  double max_step = 1.0;      // per-iteration update clamp, px
};

// Flow between an initial result and a frame. The toy backend runs a
// coarse-to-fine Lucas–Kanade pyramid (not trainable) and adds the output
// of a trainable 3×3 refinement head over [source, target, coarse flow];
// the head is zero-initialized so an untrained estimator returns the pyramid
// flow. The external backend reads flows precomputed by a pretrained
// estimator from `<external_dir>/flow_<i>_<j>.dvfl`.
class FlowEstimator {
public:
  explicit FlowEstimator(FlowBackend backend = FlowBackend::toy, std::uint64_t seed = 11);

  FlowBackend backend() const { return backend_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  PyramidSettings& pyramid() { return pyramid_; }
  const PyramidSettings& pyramid() const { return pyramid_; }

  double finetune_lr = 1e-7;
  std::filesystem::path external_dir;

  // Non-differentiable coarse flow, 2×H×W. Gather convention:
  // target(p) ≈ source(p + flow(p)).
  Tensor coarse_flow(const Tensor& source, const Tensor& target) const;
  // coarse + head(source, target, coarse); differentiable w.r.t. the head.
  Var refine(const Var& source, const Var& target, const Tensor& coarse) const;

  // Full estimate. `source` carries index i, `target` index j.
  FlowField estimate(const Frame& source, const Frame& target) const;
  // Differentiable estimate (toy backend) for training.
  Var estimate_var(const Frame& source, const Frame& target) const;
  // The non-trainable part of estimate_var (pyramid or external file), which
  // callers may cache, and the trainable completion from it.
  Tensor base_flow(const Frame& source, const Frame& target) const;
  Var complete(const Frame& source, const Frame& target, const Tensor& base) const;

  // Self-supervised head warm-up on frame pairs: minimizes mse(warp(source,
  // flow), target). Returns the last loss.
  double warm_up(std::span<const std::pair<Frame, Frame>> pairs, int steps, double lr);

private:
  Tensor external_flow(int i, int j, int h, int w) const;

  FlowBackend backend_;
  ParamSet params_;
  Conv2d head_;
  PyramidSettings pyramid_;
};

// Backward warp of a frame or feature tensor (see ops::warp).
Tensor warp_tensor(const Tensor& img, const Tensor& flow);
Frame warp(const Frame& img, const FlowField& flow);
FeatureMap warp(const FeatureMap& feat, const FlowField& flow);

// Averages r×r blocks and divides vectors by r, for use on stride-r features.
Var downscale_flow(const Var& flow, int r);
FlowField downscale_flow(const FlowField& flow, int r);

// Mean over the list of mse(warped_i, current): the image-space alignment
// loss against the rainy current frame.
Var flow_loss(std::span<const Var> warped, const Var& current);
double flow_loss(std::span<const Frame> warped, const Frame& current);

// Masked alignment loss for one neighbor: masked_mse(warp(S_t, F_{t→i}), S_i)
// over mask_i's non-raindrop pixels. A fully masked neighbor gives 0 and a
// warning.
Var masked_flow_finetune_loss(const Var& s_t, const Var& s_i, const Var& flow_t_to_i, const RaindropMask& mask_i);
double masked_flow_finetune_loss(const Frame& s_t, const Frame& s_i, const FlowField& flow_t_to_i,
                                 const RaindropMask& mask_i);

// DVFL cache file: "DVFL" | u32 H | u32 W | H·W·(u, v) as f32, little-endian.
void write_dvfl(const std::filesystem::path& path, const FlowField& f);
FlowField read_dvfl(const std::filesystem::path& path, int source_index = 0, int target_index = 0);
std::string dvfl_bytes(const FlowField& f);
FlowField dvfl_from_bytes(const std::string& bytes, int source_index = 0, int target_index = 0);

}  // namespace dropvid
