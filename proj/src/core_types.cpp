#include "dropvid/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dropvid {

Frame make_frame(Tensor pixels, int time_index) {
  if (pixels.rank() != 3) throw std::invalid_argument("frame must be C×H×W, got " + shape_str(pixels.shape()));
  if (!pixels.all_finite()) throw std::invalid_argument("frame contains non-finite pixel values");
  return Frame{std::move(pixels), time_index};
}

Frame clamp_frame(const Frame& f) {
  Frame out = f;
  for (double& v : out.pixels.values()) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "clamp_frame: non-finite pixel in frame " << f.time_index;
      throw std::invalid_argument(os.str());
    }
    v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

void require_network_size(int height, int width) {
  const auto pad_to = [](int v) {
    int t = std::max(v, kMinFrameSide);
    return (t + kEncoderStride - 1) / kEncoderStride * kEncoderStride;
  };
  if (height < kMinFrameSide || width < kMinFrameSide || height % kEncoderStride || width % kEncoderStride) {
    std::ostringstream os;
    os << "frame size " << height << "x" << width << " must be at least " << kMinFrameSide
       << " and divisible by " << kEncoderStride << "; pad to " << pad_to(height) << "x" << pad_to(width)
       << " (bottom " << pad_to(height) - height << ", right " << pad_to(width) - width << ")";
    throw std::invalid_argument(os.str());
  }
}

void validate_clip(const VideoClip& clip) {
  if (clip.frames.empty()) throw std::invalid_argument("empty clip");
  if (clip.window_radius < 1) throw std::invalid_argument("window radius must be ≥ 1");
  const Shape& s = clip.frames.front().pixels.shape();
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    if (clip.frames[i].pixels.shape() != s) throw std::invalid_argument("clip frames differ in shape");
    if (i > 0 && clip.frames[i].time_index != clip.frames[i - 1].time_index + 1)
      throw std::invalid_argument("clip frames must have unit-spaced, increasing time indices");
  }
}

RaindropMask mask_from_evidence(Tensor evidence, double tau, MaskMode mode) {
  if (tau <= 0.0) throw std::invalid_argument("mask threshold must be positive");
  RaindropMask m;
  m.threshold = tau;
  m.nonrain_weight = Tensor(evidence.shape());
  for (std::size_t i = 0; i < evidence.size(); ++i) {
    const double e = evidence[i];
    m.nonrain_weight[i] = mode == MaskMode::hard ? (e < tau ? 1.0 : 0.0) : std::max(0.0, 1.0 - e / tau);
  }
  m.evidence = std::move(evidence);
  return m;
}

RaindropMask full_mask(int height, int width) {
  RaindropMask m;
  m.evidence = Tensor(Shape{1, height, width}, 0.0);
  m.nonrain_weight = Tensor(Shape{1, height, width}, 1.0);
  return m;
}

void validate_flow(const FlowField& f) {
  const Tensor& v = f.vectors;
  if (v.rank() != 3 || v.channels() != 2) throw std::invalid_argument("flow must be 2×H×W, got " + shape_str(v.shape()));
  const double bound = std::max(v.height(), v.width());
  const std::size_t plane = static_cast<std::size_t>(v.height()) * v.width();
  for (std::size_t p = 0; p < plane; ++p) {
    const double u = v[p];
    const double w = v[plane + p];
    if (!std::isfinite(u) || !std::isfinite(w)) throw std::invalid_argument("flow contains non-finite vectors");
    if (std::hypot(u, w) > bound) throw std::invalid_argument("flow vector exceeds the max(H, W) sanity bound");
  }
}

double loss_total(const LossReport& r) { return r.flow + r.mask_ct + r.mask_cl + r.lambda_t * r.temp; }

}  // namespace dropvid
