#include "dropvid/flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "dropvid/log.hpp"

namespace dropvid {

namespace {

constexpr double kHeadFlowScale = 1.0 / 8.0;

Tensor to_gray(const Tensor& img) {
  const int c = img.channels();
  Tensor g(Shape{1, img.height(), img.width()}, 0.0);
  const std::size_t plane = g.size();
  for (int k = 0; k < c; ++k)
    for (std::size_t p = 0; p < plane; ++p) g[p] += img[k * plane + p] / c;
  return g;
}

// Separable Gaussian blur of each channel with replicate borders.
Tensor blur(const Tensor& t, double sigma) {
  if (sigma <= 0.0) return t;
  const int r = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] = std::exp(-i * i / (2 * sigma * sigma));
  for (double& v : k) v /= s;
  const int c = t.channels(), h = t.height(), w = t.width();
  Tensor tmp(t.shape()), out(t.shape());
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double a = 0.0;
        for (int i = -r; i <= r; ++i) a += k[static_cast<std::size_t>(i + r)] * t.at(ch, y, std::clamp(x + i, 0, w - 1));
        tmp.at(ch, y, x) = a;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double a = 0.0;
        for (int i = -r; i <= r; ++i) a += k[static_cast<std::size_t>(i + r)] * tmp.at(ch, std::clamp(y + i, 0, h - 1), x);
        out.at(ch, y, x) = a;
      }
  }
  return out;
}

Tensor downsample2(const Tensor& t) {
  const int c = t.channels();
  const int h = std::max(1, t.height() / 2);
  const int w = std::max(1, t.width() / 2);
  Tensor b = blur(t, 0.8);
  Tensor out(Shape{c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int y1 = std::min(2 * y + 1, t.height() - 1);
        const int x1 = std::min(2 * x + 1, t.width() - 1);
        out.at(ch, y, x) = 0.25 * (b.at(ch, 2 * y, 2 * x) + b.at(ch, 2 * y, x1) + b.at(ch, y1, 2 * x) + b.at(ch, y1, x1));
      }
  return out;
}

// Bilinear resize of a flow field to h×w with vectors rescaled accordingly.
Tensor resize_flow(const Tensor& f, int h, int w) {
  Tensor out(Shape{2, h, w});
  const double sy = static_cast<double>(f.height()) / h;
  const double sx = static_cast<double>(f.width()) / w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const double fy = (y + 0.5) * sy - 0.5;
      out.at(0, y, x) = sample_bilinear(f, 0, fx, fy) / sx;
      out.at(1, y, x) = sample_bilinear(f, 1, fx, fy) / sy;
    }
  return out;
}

}  // namespace

FlowBackend parse_flow_backend(const std::string& s) {
  if (s == "toy" || s == "toy-trainable") return FlowBackend::toy;
  if (s == "external" || s == "pretrained-external") return FlowBackend::external;
  throw std::invalid_argument("unknown flow backend '" + s + "' (expected toy-trainable or pretrained-external)");
}

std::string to_string(FlowBackend b) { return b == FlowBackend::toy ? "toy-trainable" : "pretrained-external"; }

Tensor warp_tensor(const Tensor& img, const Tensor& flow) {
  return ops::warp(Var::constant(img), Var::constant(flow)).value();
}

FlowEstimator::FlowEstimator(FlowBackend backend, std::uint64_t seed) : backend_(backend) {
  Rng rng(seed);
  head_ = Conv2d(params_, "flow_head", 8, 2, 3, {1, 1, 1}, rng, /*zero_init=*/true);
}

Tensor FlowEstimator::coarse_flow(const Tensor& source, const Tensor& target) const {
  require_same_shape(source, target, "coarse_flow");
  const PyramidSettings& ps = pyramid_;
  std::vector<Tensor> src{to_gray(source)}, tgt{to_gray(target)};
  for (int l = 1; l < ps.levels; ++l) {
    if (src.back().height() < 8 || src.back().width() < 8) break;
    src.push_back(downsample2(src.back()));
    tgt.push_back(downsample2(tgt.back()));
  }
  Tensor flow;
  for (int l = static_cast<int>(src.size()) - 1; l >= 0; --l) {
    const Tensor& s = src[static_cast<std::size_t>(l)];
    const Tensor& t = tgt[static_cast<std::size_t>(l)];
    const int h = s.height(), w = s.width();
    flow = flow.empty() ? Tensor(Shape{2, h, w}, 0.0) : resize_flow(flow, h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int it = 0; it < ps.iterations; ++it) {
      const Tensor warped = warp_tensor(s, flow);
      Tensor terms(Shape{5, h, w});
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double gx = 0.5 * (warped.at(0, y, std::min(x + 1, w - 1)) - warped.at(0, y, std::max(x - 1, 0)));
          const double gy = 0.5 * (warped.at(0, std::min(y + 1, h - 1), x) - warped.at(0, std::max(y - 1, 0), x));
          const double r = t.at(0, y, x) - warped.at(0, y, x);
          terms.at(0, y, x) = gx * gx;
          terms.at(1, y, x) = gx * gy;
          terms.at(2, y, x) = gy * gy;
          terms.at(3, y, x) = gx * r;
          terms.at(4, y, x) = gy * r;
        }
      const Tensor acc = blur(terms, ps.window_sigma);
      for (std::size_t p = 0; p < plane; ++p) {
        const double a11 = acc[p] + ps.regularization, a12 = acc[plane + p], a22 = acc[2 * plane + p] + ps.regularization;
        const double b1 = acc[3 * plane + p], b2 = acc[4 * plane + p];
        const double det = a11 * a22 - a12 * a12;
        double du = (a22 * b1 - a12 * b2) / det;
        double dv = (a11 * b2 - a12 * b1) / det;
        du = std::clamp(du, -ps.max_step, ps.max_step);
        dv = std::clamp(dv, -ps.max_step, ps.max_step);
        flow[p] += du;
        flow[plane + p] += dv;
      }
    }
    flow = blur(flow, ps.smooth_sigma);
  }
  return flow;
}

Var FlowEstimator::refine(const Var& source, const Var& target, const Tensor& coarse) const {
  const Var c = Var::constant(coarse);
  const Var in = ops::concat_channels({source, target, Var::constant(coarse * kHeadFlowScale)});
  return ops::add(c, head_(in));
}

Tensor FlowEstimator::external_flow(int i, int j, int h, int w) const {
  if (external_dir.empty())
    throw FlowBackendUnavailable(
        "pretrained-external flow backend is not configured (no flow directory); use the toy-trainable backend "
        "(flow_backend = toy-trainable) instead");
  const auto path = external_dir / ("flow_" + std::to_string(i) + "_" + std::to_string(j) + ".dvfl");
  if (!std::filesystem::exists(path))
    throw FlowBackendUnavailable("pretrained-external flow " + path.string() +
                                 " is missing; precompute it or fall back to the toy-trainable backend");
  FlowField f = read_dvfl(path, i, j);
  if (f.vectors.height() != h || f.vectors.width() != w)
    throw std::runtime_error("external flow " + path.string() + " has the wrong size");
  return f.vectors;
}

FlowField FlowEstimator::estimate(const Frame& source, const Frame& target) const {
  require_same_shape(source.pixels, target.pixels, "estimate_flow");
  FlowField f;
  f.source_index = source.time_index;
  f.target_index = target.time_index;
  if (backend_ == FlowBackend::external) {
    f.vectors = external_flow(source.time_index, target.time_index, source.height(), source.width());
  } else {
    f.vectors = estimate_var(source, target).value();
  }
  validate_flow(f);
  return f;
}

Var FlowEstimator::estimate_var(const Frame& source, const Frame& target) const {
  return complete(source, target, base_flow(source, target));
}

Tensor FlowEstimator::base_flow(const Frame& source, const Frame& target) const {
  require_same_shape(source.pixels, target.pixels, "flow estimate");
  if (backend_ == FlowBackend::external)
    return external_flow(source.time_index, target.time_index, source.height(), source.width());
  return coarse_flow(source.pixels, target.pixels);
}

Var FlowEstimator::complete(const Frame& source, const Frame& target, const Tensor& base) const {
  if (backend_ == FlowBackend::external) return Var::constant(base);
  return refine(Var::constant(source.pixels), Var::constant(target.pixels), base);
}

double FlowEstimator::warm_up(std::span<const std::pair<Frame, Frame>> pairs, int steps, double lr) {
  if (backend_ != FlowBackend::toy || pairs.empty()) return 0.0;
  std::vector<Tensor> coarse;
  for (const auto& [s, t] : pairs) coarse.push_back(coarse_flow(s.pixels, t.pixels));
  std::vector<Var> ps;
  for (const auto& [_, v] : params_.params()) ps.push_back(v);
  Adam opt({{ps, lr}});
  double last = 0.0;
  for (int step = 0; step < steps; ++step) {
    opt.zero_grad();
    std::vector<Var> losses;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const Var src = Var::constant(pairs[i].first.pixels);
      const Var tgt = Var::constant(pairs[i].second.pixels);
      losses.push_back(ops::mse(ops::warp(src, refine(src, tgt, coarse[i])), tgt));
    }
    Var loss = ops::mean(losses);
    last = loss.item();
    backward(loss);
    opt.step(1.0);
  }
  return last;
}

Frame warp(const Frame& img, const FlowField& flow) {
  return Frame{warp_tensor(img.pixels, flow.vectors), flow.target_index};
}

FeatureMap warp(const FeatureMap& feat, const FlowField& flow) {
  return FeatureMap{warp_tensor(feat.activations, flow.vectors), flow.target_index};
}

Var downscale_flow(const Var& flow, int r) { return ops::scale(ops::avg_pool(flow, r), 1.0 / r); }

FlowField downscale_flow(const FlowField& flow, int r) {
  return FlowField{downscale_flow(Var::constant(flow.vectors), r).value(), flow.source_index, flow.target_index};
}

Var flow_loss(std::span<const Var> warped, const Var& current) {
  if (warped.empty()) throw std::invalid_argument("flow_loss: no warped frames");
  std::vector<Var> terms;
  for (const Var& w : warped) terms.push_back(ops::mse(w, current));
  return ops::mean(terms);
}

double flow_loss(std::span<const Frame> warped, const Frame& current) {
  std::vector<Var> vs;
  for (const Frame& f : warped) vs.push_back(Var::constant(f.pixels));
  return flow_loss(vs, Var::constant(current.pixels)).item();
}

Var masked_flow_finetune_loss(const Var& s_t, const Var& s_i, const Var& flow_t_to_i, const RaindropMask& mask_i) {
  if (mask_i.nonrain_weight.sum() <= 0.0) log_warn("masked_flow_finetune_loss: neighbor frame fully masked; contributes 0");
  return ops::masked_mse(ops::warp(s_t, flow_t_to_i), s_i, mask_i.nonrain_weight);
}

double masked_flow_finetune_loss(const Frame& s_t, const Frame& s_i, const FlowField& flow_t_to_i,
                                 const RaindropMask& mask_i) {
  return masked_flow_finetune_loss(Var::constant(s_t.pixels), Var::constant(s_i.pixels),
                                   Var::constant(flow_t_to_i.vectors), mask_i)
      .item();
}

std::string dvfl_bytes(const FlowField& f) {
  const Tensor& v = f.vectors;
  if (v.rank() != 3 || v.channels() != 2) throw std::invalid_argument("DVFL needs a 2×H×W flow");
  std::string out = "DVFL";
  auto u32 = [&out](std::uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  };
  u32(static_cast<std::uint32_t>(v.height()));
  u32(static_cast<std::uint32_t>(v.width()));
  const std::size_t plane = static_cast<std::size_t>(v.height()) * v.width();
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 2; ++c) u32(std::bit_cast<std::uint32_t>(static_cast<float>(v[c * plane + p])));
  return out;
}

FlowField dvfl_from_bytes(const std::string& bytes, int source_index, int target_index) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "DVFL") != 0) throw std::runtime_error("not a DVFL flow file");
  auto u32 = [&bytes](std::size_t at) {
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    return x;
  };
  const std::uint32_t h = u32(4), w = u32(8);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  if (bytes.size() != 12 + plane * 8) throw std::runtime_error("DVFL size does not match its header");
  FlowField f;
  f.source_index = source_index;
  f.target_index = target_index;
  f.vectors = Tensor(Shape{2, static_cast<int>(h), static_cast<int>(w)});
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 2; ++c) f.vectors[c * plane + p] = std::bit_cast<float>(u32(12 + (p * 2 + c) * 4));
  return f;
}

void write_dvfl(const std::filesystem::path& path, const FlowField& f) { write_file_bytes(path, dvfl_bytes(f)); }

FlowField read_dvfl(const std::filesystem::path& path, int source_index, int target_index) {
  return dvfl_from_bytes(read_file_bytes(path), source_index, target_index);
}

}  // namespace dropvid
