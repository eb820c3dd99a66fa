#include "dropvid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace dropvid {

double drop_alpha(const RaindropShape& d, double x, double y) {
  const double nx = (x - d.cx) / d.ra;
  const double ny = (y - d.cy) / d.rb;
  const double rho = std::sqrt(nx * nx + ny * ny);
  if (rho <= 1.0) return d.alpha_max;
  if (d.blur_sigma <= 0.0) return 0.0;
  const double e = (rho - 1.0) * std::min(d.ra, d.rb);
  if (e >= 2.0 * d.blur_sigma) return 0.0;
  return d.alpha_max * std::exp(-e * e / (2.0 * d.blur_sigma * d.blur_sigma));
}

void validate_drop(const RaindropShape& d) {
  std::ostringstream os;
  if (d.ra < 3.0 || d.ra > 80.0 || d.rb < 3.0 || d.rb > 80.0) os << "drop radii must lie in [3, 80]; ";
  if (d.alpha_max < 0.0 || d.alpha_max > 1.0) os << "alpha_max must lie in [0, 1]; ";
  if (d.refraction_strength < 0.0 || d.blur_sigma < 0.0) os << "refraction and blur must be ≥ 0; ";
  if (d.haze < 0.0 || d.haze > 1.0) os << "haze must lie in [0, 1]; ";
  if (!os.str().empty()) throw std::invalid_argument("invalid drop: " + os.str());
}

namespace {

struct Box {
  int x0, y0, x1, y1;  // inclusive
  bool empty() const { return x1 < x0 || y1 < y0; }
};

Box support_box(const RaindropShape& d, int h, int w) {
  const double grow = 1.0 + 2.0 * d.blur_sigma / std::min(d.ra, d.rb);
  Box b{static_cast<int>(std::floor(d.cx - d.ra * grow)), static_cast<int>(std::floor(d.cy - d.rb * grow)),
        static_cast<int>(std::ceil(d.cx + d.ra * grow)), static_cast<int>(std::ceil(d.cy + d.rb * grow))};
  b.x0 = std::max(b.x0, 0);
  b.y0 = std::max(b.y0, 0);
  b.x1 = std::min(b.x1, w - 1);
  b.y1 = std::min(b.y1, h - 1);
  return b;
}

// Refracted, blurred drop interior over box `b`, one plane per channel.
std::vector<Tensor> drop_interior(const Tensor& clean, const RaindropShape& d, const Box& b) {
  const int c = clean.channels();
  const int radius = d.blur_sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * d.blur_sigma)) : 0;
  const int ph = b.y1 - b.y0 + 1 + 2 * radius;
  const int pw = b.x1 - b.x0 + 1 + 2 * radius;
  std::vector<Tensor> planes;
  for (int k = 0; k < c; ++k) {
    Tensor raw(Shape{1, ph, pw});
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) {
        const double px = b.x0 - radius + x;
        const double py = b.y0 - radius + y;
        double v = d.tint;
        if (d.refraction_strength > 0.0) {
          const double qx = d.cx + (px - d.cx) / d.refraction_strength;
          const double qy = d.cy - (py - d.cy) / d.refraction_strength;
          v = (1.0 - d.haze) * sample_bilinear(clean, k, qx, qy) + d.haze * d.tint;
        }
        raw.at(0, y, x) = v;
      }
    if (radius > 0) {
      std::vector<double> kern(static_cast<std::size_t>(2 * radius + 1));
      double ks = 0.0;
      for (int i = -radius; i <= radius; ++i)
        ks += kern[static_cast<std::size_t>(i + radius)] = std::exp(-i * i / (2.0 * d.blur_sigma * d.blur_sigma));
      for (double& kv : kern) kv /= ks;
      Tensor tmp(raw.shape());
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) {
          double s = 0.0;
          for (int i = -radius; i <= radius; ++i)
            s += kern[static_cast<std::size_t>(i + radius)] * raw.at(0, y, std::clamp(x + i, 0, pw - 1));
          tmp.at(0, y, x) = s;
        }
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) {
          double s = 0.0;
          for (int i = -radius; i <= radius; ++i)
            s += kern[static_cast<std::size_t>(i + radius)] * tmp.at(0, std::clamp(y + i, 0, ph - 1), x);
          raw.at(0, y, x) = s;
        }
    }
    // Crop the blur margin away.
    Tensor out(Shape{1, b.y1 - b.y0 + 1, b.x1 - b.x0 + 1});
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) out.at(0, y, x) = raw.at(0, y + radius, x + radius);
    planes.push_back(std::move(out));
  }
  return planes;
}

}  // namespace

Composite composite_drops(const Frame& clean, std::span<const RaindropShape> drops, std::uint64_t seed,
                          const CompositeOptions& opt) {
  const Tensor& src = clean.pixels;
  if (src.rank() != 3) throw std::invalid_argument("composite_drops: clean frame must be C×H×W");
  const int c = src.channels();
  const int h = src.height();
  const int w = src.width();
  Composite out;
  out.frame = clean;
  out.alpha = Tensor(Shape{1, h, w}, 0.0);
  Tensor& dst = out.frame.pixels;
  Tensor transmit(Shape{1, h, w}, 1.0);

  Rng rng(seed);
  std::uniform_real_distribution<double> noise(-opt.noise, opt.noise);
  for (const RaindropShape& d : drops) {
    validate_drop(d);
    const Box b = support_box(d, h, w);
    if (b.empty()) continue;
    const std::vector<Tensor> interior = drop_interior(src, d, b);
    for (int y = b.y0; y <= b.y1; ++y)
      for (int x = b.x0; x <= b.x1; ++x) {
        const double a = drop_alpha(d, x, y);
        if (a <= 0.0) continue;
        for (int k = 0; k < c; ++k) {
          double v = interior[static_cast<std::size_t>(k)].at(0, y - b.y0, x - b.x0);
          if (opt.noise > 0.0) v += noise(rng);
          dst.at(k, y, x) = std::clamp((1.0 - a) * dst.at(k, y, x) + a * v, 0.0, 1.0);
        }
        transmit.at(0, y, x) *= 1.0 - a;
      }
  }
  for (std::size_t i = 0; i < transmit.size(); ++i) out.alpha[i] = 1.0 - transmit[i];

  Tensor evidence(Shape{1, h, w}, 0.0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t p = 0; p < plane; ++p) {
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += std::abs(dst[k * plane + p] - src[k * plane + p]);
    evidence[p] = s / c;
  }
  out.mask = mask_from_evidence(std::move(evidence), opt.tau);
  return out;
}

SynthClip synthesize_clip(const VideoClip& clean, std::span<const DropTrajectory> trajectories,
                          double background_speed, std::uint64_t seed, const CompositeOptions& opt) {
  if (clean.size() < 2) throw std::invalid_argument("synthesize_clip: clip needs at least 2 frames");
  validate_clip(clean);
  for (const DropTrajectory& t : trajectories) {
    if (std::hypot(t.vx, t.vy) >= background_speed) {
      std::ostringstream os;
      os << "drop speed " << std::hypot(t.vx, t.vy) << " px/frame must be below the background speed "
         << background_speed;
      throw std::invalid_argument(os.str());
    }
  }
  SynthClip out;
  out.rain.window_radius = clean.window_radius;
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k < clean.size(); ++k) {
    std::vector<RaindropShape> drops;
    for (const DropTrajectory& t : trajectories) {
      RaindropShape d = t.shape;
      d.cx += t.vx * k;
      d.cy += t.vy * k;
      if (t.jitter_sigma > 0.0) {
        d.cx += t.jitter_sigma * gauss(rng);
        d.cy += t.jitter_sigma * gauss(rng);
      }
      drops.push_back(d);
    }
    const std::uint64_t frame_seed = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(k) + 1;
    Composite c = composite_drops(clean.frames[static_cast<std::size_t>(k)], drops, frame_seed, opt);
    out.rain.frames.push_back(std::move(c.frame));
    out.masks.push_back(std::move(c.mask));
    out.drops.push_back(std::move(drops));
  }
  return out;
}

std::vector<DropTrajectory> random_trajectories(int count, int height, int width, const DropSampling& s, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<DropTrajectory> out;
  for (int i = 0; i < count; ++i) {
    DropTrajectory t;
    t.shape.ra = s.min_radius + (s.max_radius - s.min_radius) * u(rng);
    t.shape.rb = t.shape.ra * (0.7 + 0.3 * u(rng));
    t.shape.cx = t.shape.ra + (width - 2 * t.shape.ra) * u(rng);
    t.shape.cy = t.shape.rb + (height - 2 * t.shape.rb) * u(rng);
    t.shape.alpha_max = 0.75 + 0.2 * u(rng);
    t.shape.refraction_strength = 0.3 + 0.2 * u(rng);
    t.shape.blur_sigma = 0.8 + 0.8 * u(rng);
    const double ang = 2.0 * std::numbers::pi * u(rng);
    const double sp = s.max_speed * u(rng);
    t.vx = sp * std::cos(ang);
    t.vy = sp * std::sin(ang);
    t.jitter_sigma = s.jitter_sigma;
    out.push_back(t);
  }
  return out;
}

VideoClip make_translating_scene(int frames, int height, int width, double vx, double vy, std::uint64_t seed) {
  struct Wave {
    double kx, ky, phase, amp;
  };
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<Wave>> waves(3);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 10; ++i) {
      const double freq = 0.06 + 0.34 * u(rng);
      const double ang = std::numbers::pi * u(rng);
      waves[static_cast<std::size_t>(c)].push_back(
          {freq * std::cos(ang), freq * std::sin(ang), 2.0 * std::numbers::pi * u(rng), 0.035 + 0.02 * u(rng)});
    }
  }
  const double base[3] = {0.45 + 0.1 * u(rng), 0.45 + 0.1 * u(rng), 0.45 + 0.1 * u(rng)};
  VideoClip clip;
  for (int k = 0; k < frames; ++k) {
    Tensor t(Shape{3, height, width});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const double sx = x - vx * k;
          const double sy = y - vy * k;
          double v = base[c];
          for (const Wave& wv : waves[static_cast<std::size_t>(c)]) v += wv.amp * std::sin(wv.kx * sx + wv.ky * sy + wv.phase);
          t.at(c, y, x) = std::clamp(v, 0.0, 1.0);
        }
    clip.frames.push_back(Frame{std::move(t), k});
  }
  return clip;
}

}  // namespace dropvid
