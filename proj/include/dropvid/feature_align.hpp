#pragma once

#include "dropvid/core_types.hpp"
#include "dropvid/nn.hpp"

namespace dropvid {

struct AlignConfig {
  int channels = 64;  // C_f
  double offset_bound = 8.0;
  std::uint64_t seed = 7;
};

inline constexpr int kDeformTaps = 9;

// Shared stride-4 encoder, offset predictor over (neighbor, center) feature
// pairs, and a 3×3 deformable convolution.
class AlignEncoder {
public:
  explicit AlignEncoder(const AlignConfig& cfg = {});

  const AlignConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // x: 3×H×W with H, W divisible by the stride.
  Var encode(const Var& x) const;
  // 2K×h×w offsets clamped to ±offset_bound. Shapes must match.
  Var predict_offsets(const Var& neighbor, const Var& center) const;
  Var align(const Var& neighbor, const Var& offsets) const;

  FeatureMap encode(const Frame& x) const;
  OffsetField predict_offsets(const FeatureMap& neighbor, const FeatureMap& center) const;
  FeatureMap deform_conv(const FeatureMap& neighbor, const OffsetField& offsets) const;

  const Var& deform_weight() const { return deform_w_; }
  const Var& deform_bias() const { return deform_b_; }

private:
  AlignConfig cfg_;
  ParamSet params_;
  Conv2d enc1_, enc2_, enc3_;
  Conv2d off1_, off2_;
  Var deform_w_, deform_b_;
};

}  // namespace dropvid
