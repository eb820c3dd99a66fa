#pragma once

#include <vector>

#include "dropvid/core_types.hpp"
#include "dropvid/nn.hpp"

namespace dropvid {

struct InitialNetConfig {
  int width = 16;            // generator base channels
  int attention_width = 8;
  int attention_steps = 3;
  std::uint64_t seed = 3;
};

struct Restoration {
  Var output;                    // S, clamped to [0,1]
  std::vector<Var> attention;    // one 1×H×W map per recurrent step
};

// Attention-guided residual encoder–decoder. The last generator conv is
// zero-initialized, so an untrained net returns its (clamped) input.
class InitialNet {
public:
  explicit InitialNet(const InitialNetConfig& cfg = {});

  const InitialNetConfig& config() const { return cfg_; }
  ParamSet& params() { return gen_; }
  const ParamSet& params() const { return gen_; }
  ParamSet& disc_params() { return disc_; }
  const ParamSet& disc_params() const { return disc_; }
  // Fixed random extractor used by the perceptual term; never trained.
  const ParamSet& perceptual_params() const { return percep_; }

  Restoration forward(const Var& rain) const;
  Var restore(const Var& rain) const { return forward(rain).output; }
  // Mean patch realness in (0,1).
  Var discriminate(const Var& img) const;
  Var perceptual(const Var& img) const;

  // Generator + discriminator + extractor, under "gen.", "disc.", "percep.".
  void save_to(Archive& a) const;
  void load_from(const Archive& a);
  // Content hash of every parameter (generator, discriminator, extractor).
  std::string hash() const;

private:
  InitialNetConfig cfg_;
  ParamSet gen_, disc_, percep_;
  Conv2d att1_, att2_, att3_;
  Conv2d e1_, e2_, e3_, mid1_, mid2_, up1_, dec1_, up2_, dec2_, out_;
  Conv2d d1_, d2_, d3_;
  Conv2d p1_, p2_;
};

Frame restore_single(const Frame& rain, const InitialNet& net);

// Evidence = channel-mean |I − S|; weight from mask_from_evidence.
RaindropMask compute_mask(const Frame& rain, const Frame& initial, double tau = 0.05, MaskMode mode = MaskMode::hard);

inline constexpr double kAdversarialEps = 1e-6;

struct SingleImageLoss {
  Var pixel;        // mean squared error against the clean target
  Var perceptual;   // mean squared feature error
  Var adversarial;  // log(1 − d + eps)
  Var total;
};

// total = pixel + perceptual + adversarial_weight·adversarial.
SingleImageLoss single_image_loss(const Var& clean, const Var& initial, const Var& disc_score, const Var& feat_clean,
                                  const Var& feat_initial, double adversarial_weight = 1.0);

// −[log(d_real + eps) + log(1 − d_fake + eps)], minimized by the discriminator.
Var discriminator_loss(const Var& d_real, const Var& d_fake);

struct SingleImageLossValues {
  double pixel = 0.0, perceptual = 0.0, adversarial = 0.0, total = 0.0;
};

// disc_score must lie in (0,1]; 1 is guarded by the epsilon.
SingleImageLossValues single_image_loss(const Frame& clean, const Frame& initial, double disc_score,
                                        const FeatureMap& feat_clean, const FeatureMap& feat_initial);

}  // namespace dropvid
