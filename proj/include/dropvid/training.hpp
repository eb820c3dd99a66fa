#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dropvid/flow.hpp"
#include "dropvid/initial_net.hpp"
#include "dropvid/losses.hpp"
#include "dropvid/video_net.hpp"

namespace dropvid {

struct TrainConfig {
  int crop_size = 128;
  int batch_size = 4;
  double lr_stage1 = 1e-4;
  double lr_stage2 = 1e-4;
  double lr_flow_finetune = 1e-7;
  int steps_stage1 = 200;
  int steps_stage2 = 500;
  std::uint64_t seed = 1;
  double lambda_t = 0.5;
  double tau = 0.05;
  int window_radius = 2;

  double adversarial_weight = 0.01;
  double clip_norm = 1.0;
  bool finetune_flow = true;
  bool stop_gradient_neighbors = false;

  // Architecture.
  int init_width = 16;
  int init_attention_width = 8;
  int feature_channels = 16;
  double offset_bound = 8.0;
  std::string flow_backend = "toy-trainable";

  // Ablations.
  bool use_mask = true;
  bool use_initial = true;
  bool use_alignment = true;
  bool use_temporal = true;
  bool residual = true;
  std::string mask_mode = "hard";
  std::string flow_pair = "initial-rain";

  // Individual loss terms (all on by default).
  bool loss_flow = true;
  bool loss_mask_ct = true;
  bool loss_mask_cl = true;
  bool loss_temp = true;
};

// Flat "key = value" text, '#' comments. Unknown keys, malformed lines and
// invalid values are errors that name the line.
TrainConfig parse_config(const std::string& text, const TrainConfig& base = {});
TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base = {});
// Every key, one per line; doubles with 17 significant digits.
std::string config_to_text(const TrainConfig& cfg);
void validate_config(const TrainConfig& cfg);

Stage2Options stage2_options(const TrainConfig& cfg);
InitialNetConfig initial_config(const TrainConfig& cfg);
AlignConfig align_config(const TrainConfig& cfg);
DecoderConfig decoder_config(const TrainConfig& cfg);
double effective_lambda_t(const TrainConfig& cfg);

struct PairedData {
  std::vector<Frame> rain;
  std::vector<Frame> clean;
};

struct Stage1Step {
  int step = 0;
  double pixel = 0.0, perceptual = 0.0, adversarial = 0.0, total = 0.0, discriminator = 0.0;
};

using Stage1Logger = std::function<void(const Stage1Step&)>;
using Stage2Logger = std::function<void(int step, const LossReport&)>;

// Supervised stage 1. Random crops of crop_size, batch_size pairs per step,
// one generator and one discriminator Adam update per step.
std::vector<Stage1Step> train_stage1(const PairedData& data, InitialNet& net, const TrainConfig& cfg,
                                     const Stage1Logger& log = {});

// Self-supervised stage 2 with stage 1 frozen. Each step samples batch_size
// (clip, center, crop) windows. The flow head is updated with
// lr_flow_finetune when finetune_flow is set.
class Stage2Trainer {
public:
  Stage2Trainer(const std::vector<VideoClip>& clips, const InitialNet& stage1, FlowEstimator& flow, VideoNet& net,
                const TrainConfig& cfg);

  // One optimizer step; returns the batch-mean loss report.
  LossReport step();
  std::vector<LossReport> run(int steps, const Stage2Logger& log = {});
  int steps_done() const { return steps_; }

  // Losses for a given window without updating anything.
  LossReport evaluate(int clip, int t);

private:
  struct Terms {
    Var flow, ct, cl, temp, total;
  };
  Terms losses(int clip, int t, const CropRect& crop);

  const std::vector<VideoClip>& clips_;
  const InitialNet& stage1_;
  FlowEstimator& flow_;
  VideoNet& net_;
  TrainConfig cfg_;
  Stage2Options opt_;
  Stage2Options neighbor_opt_;
  LossWeights weights_;
  std::vector<Stage1Results> s1_;
  std::vector<FlowCache> caches_;
  Adam adam_;
  Rng rng_;
  int steps_ = 0;
};

// One JSON object per line: {"step":, "flow":, "mask_ct":, "mask_cl":, "temp":, "total":}.
std::string loss_json_line(int step, const LossReport& r);

// Checkpoints carry architecture scalars under "meta." so they load alone.
void save_stage1(const std::filesystem::path& path, const InitialNet& net);
InitialNet load_stage1(const std::filesystem::path& path);
// The stage-2 checkpoint also records the forward options it was trained with.
void save_stage2(const std::filesystem::path& path, const VideoNet& net, const Stage2Options& opt = {});
VideoNet load_stage2(const std::filesystem::path& path);
Stage2Options load_stage2_options(const std::filesystem::path& path);
void save_flow(const std::filesystem::path& path, const FlowEstimator& flow);
// Loads head weights and pyramid settings into an estimator of the recorded
// backend.
FlowEstimator load_flow(const std::filesystem::path& path);

}  // namespace dropvid
