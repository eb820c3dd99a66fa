#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dropvid/core_types.hpp"
#include "dropvid/flow.hpp"

namespace dropvid {

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

double frame_mse(const Frame& a, const Frame& b);
// 10·log10(1/MSE), peak 1. Identical frames give kPsnrInfinity.
double psnr(const Frame& a, const Frame& b);
// PSNR over the pixels where region > 0 (all channels). Empty region → NaN.
double masked_psnr(const Frame& a, const Frame& b, const Tensor& region);

struct SsimOptions {
  bool quantize = false;  // round both frames to 8-bit levels first
};

// Gaussian-window SSIM (11×11, σ = 1.5, K1 = 0.01, K2 = 0.03, data range 1)
// over valid window positions, per channel, averaged.
double ssim(const Frame& a, const Frame& b, const SsimOptions& opt = {});

// Mean over t of masked_mse(warp(O_t, flow_t), O_{t+1}, mask_t); flow_t
// gathers O_t onto O_{t+1}. Needs size−1 flows and masks.
double temporal_warp_error(const VideoClip& outputs, const std::vector<FlowField>& flows,
                           const std::vector<RaindropMask>& masks);

enum class MaskSource { ground_truth, initial_evidence, none };
std::string to_string(MaskSource m);

struct FrameScores {
  double psnr = 0.0, ssim = 0.0, masked_psnr = 0.0;
};

struct EvalReport {
  std::string video;
  double psnr = 0.0;         // mean over frames (infinite frames make it inf)
  double ssim = 0.0;
  double masked_psnr = 0.0;  // mean over frames with a non-empty region
  double temporal_warp_error = 0.0;
  MaskSource mask_source = MaskSource::none;
  std::vector<FrameScores> frames;
};

struct EvalInputs {
  std::filesystem::path restored_dir;
  std::filesystem::path gt_dir;
  // Grayscale PNGs, raindrop where > 0.5. Takes precedence over rain_dir.
  std::optional<std::filesystem::path> mask_dir;
  // Rainy inputs; masks then come from compute_mask(rain, restored).
  std::optional<std::filesystem::path> rain_dir;
  std::string video_name;
  double tau = 0.05;
};

// Frames are matched by filename; missing or extra files are listed in the
// error. Temporal error uses flows estimated between consecutive
// ground-truth frames and a full mask.
EvalReport evaluate_method(const EvalInputs& in, const FlowEstimator& flow);
// Same, on frames already in memory.
EvalReport evaluate_frames(const std::string& video, const std::vector<Frame>& restored, const std::vector<Frame>& gt,
                           const std::vector<Tensor>& regions, MaskSource source, const FlowEstimator& flow);

// Header `video,psnr,ssim,masked_psnr,temporal_warp_error`, one row per
// report and a final `mean` row. Infinity is written as `inf`.
std::string report_csv(const std::vector<EvalReport>& reports);

struct CsvRow {
  std::string video;
  double psnr = 0.0, ssim = 0.0, masked_psnr = 0.0, temporal_warp_error = 0.0;
};
std::vector<CsvRow> parse_report_csv(const std::string& text);

}  // namespace dropvid
