#include "dropvid/video_net.hpp"

#include <sstream>
#include <thread>
#include <stdexcept>

namespace dropvid {

Decoder::Decoder(const DecoderConfig& cfg) : cfg_(cfg) {
  const int c = cfg.channels;
  if (c < 4 || c % 4) throw std::invalid_argument("decoder channels must be a positive multiple of 4");
  Rng rng(cfg.seed);
  t3_ = Conv2d(params_, "temporal3", 3 * c, c, 3, {1, 1, 1}, rng);
  t2_ = Conv2d(params_, "temporal2", 2 * c, c, 3, {1, 1, 1}, rng);
  up1_ = Conv2d(params_, "up1", c, 2 * c, 3, {1, 1, 1}, rng);
  up2_ = Conv2d(params_, "up2", c / 2, c, 3, {1, 1, 1}, rng);
  out_ = Conv2d(params_, "out", c / 4, 3, 3, {1, 1, 1}, rng, false, cfg.head_init_scale);
}

Var Decoder::head(const std::vector<Var>& aligned) const {
  if (aligned.size() != 4)
    throw std::invalid_argument("decode needs exactly 4 neighbor feature maps, got " + std::to_string(aligned.size()));
  for (const Var& a : aligned) require_same_shape(a.value(), aligned[0].value(), "decode");
  using ops::concat_channels;
  using ops::leaky_relu;
  // Temporal extent 3 slides over the 4 maps (2 positions), then extent 2.
  Var h0 = leaky_relu(t3_(concat_channels({aligned[0], aligned[1], aligned[2]})));
  Var h1 = leaky_relu(t3_(concat_channels({aligned[1], aligned[2], aligned[3]})));
  Var g = leaky_relu(t2_(concat_channels({h0, h1})));
  g = leaky_relu(ops::pixel_shuffle(up1_(g), 2));
  g = leaky_relu(ops::pixel_shuffle(up2_(g), 2));
  return out_(g);
}

Var Decoder::decode(const std::vector<Var>& aligned, const Var& base) const {
  Var h = head(aligned);
  if (!base.defined()) return ops::sigmoid(h);
  require_same_shape(h.value(), base.value(), "decode residual");
  return ops::sigmoid(ops::add(h, ops::logit(base)));
}

Frame Decoder::decode(const std::vector<FeatureMap>& aligned, int t) const {
  if (aligned.size() != 4)
    throw std::invalid_argument("decode needs exactly 4 neighbor feature maps, got " + std::to_string(aligned.size()));
  const int want[4] = {t - 2, t - 1, t + 1, t + 2};
  std::vector<Var> v;
  for (int k = 0; k < 4; ++k) {
    if (aligned[k].time_index != want[k]) {
      std::ostringstream os;
      os << "decode: neighbor " << k << " has time " << aligned[k].time_index << ", expected " << want[k];
      throw std::invalid_argument(os.str());
    }
    v.push_back(Var::constant(aligned[k].activations));
  }
  return Frame{decode(v).value(), t};
}

std::vector<int> window_indices(int clip_size, int t, int radius, BoundaryPolicy policy, bool* reflected) {
  if (t < 0 || t >= clip_size) throw std::out_of_range("frame " + std::to_string(t) + " is outside the clip");
  if (policy == BoundaryPolicy::reflect && clip_size <= radius)
    throw std::invalid_argument("clip too short to reflect a window of radius " + std::to_string(radius));
  std::vector<int> idx;
  bool refl = false;
  for (int i = t - radius; i <= t + radius; ++i) {
    if (i >= 0 && i < clip_size) {
      idx.push_back(i);
      continue;
    }
    if (policy == BoundaryPolicy::strict) {
      std::ostringstream os;
      os << "frame " << t << " needs neighbors " << t - radius << ".." << t + radius << " but the clip has frames 0.."
         << clip_size - 1 << " (use reflect boundary policy for edge frames)";
      throw std::out_of_range(os.str());
    }
    refl = true;
    idx.push_back(i < 0 ? -i : 2 * (clip_size - 1) - i);
  }
  if (reflected) *reflected = refl;
  return idx;
}

Stage1Results run_stage1(const VideoClip& clip, const InitialNet& net, const Stage2Options& opt) {
  Stage1Results r;
  for (const Frame& f : clip.frames) {
    Frame s = opt.use_initial ? restore_single(f, net) : f;
    r.masks.push_back(opt.use_mask ? compute_mask(f, s, opt.tau, opt.mask_mode) : full_mask(f.height(), f.width()));
    r.initial.push_back(std::move(s));
  }
  return r;
}

const Tensor& FlowCache::base(const Frame& source, const Frame& target, int kind) {
  const auto key = std::make_tuple(source.time_index, target.time_index, kind);
  auto it = cache_.find(key);
  if (it == cache_.end()) it = cache_.emplace(key, est_->base_flow(source, target)).first;
  return it->second;
}

namespace {

Tensor crop_tensor(const Tensor& t, const CropRect& c) {
  if (c.height == 0) return t;
  if (c.y0 < 0 || c.x0 < 0 || c.y0 + c.height > t.height() || c.x0 + c.width > t.width())
    throw std::invalid_argument("crop rectangle leaves the frame");
  Tensor out(Shape{t.channels(), c.height, c.width});
  for (int ch = 0; ch < t.channels(); ++ch)
    for (int y = 0; y < c.height; ++y)
      for (int x = 0; x < c.width; ++x) out.at(ch, y, x) = t.at(ch, c.y0 + y, c.x0 + x);
  return out;
}

Frame crop_frame(const Frame& f, const CropRect& c) { return Frame{crop_tensor(f.pixels, c), f.time_index}; }

RaindropMask crop_mask(const RaindropMask& m, const CropRect& c) {
  RaindropMask r;
  r.evidence = crop_tensor(m.evidence, c);
  r.nonrain_weight = crop_tensor(m.nonrain_weight, c);
  r.threshold = m.threshold;
  return r;
}

}  // namespace

Window make_window(const VideoClip& clip, const Stage1Results& s1, FlowCache& flows, int t, const Stage2Options& opt,
                   const CropRect& crop) {
  Window w;
  w.center = t;
  w.indices = window_indices(clip.size(), t, clip.window_radius, opt.boundary, &w.reflected);
  if (w.indices.size() != 5) throw std::invalid_argument("stage 2 expects a 5-frame window (radius 2)");
  for (int i : w.indices) {
    w.rain.push_back(crop_frame(clip.frames[i], crop));
    w.initial.push_back(crop_frame(s1.initial[i], crop));
    w.masks.push_back(crop_mask(s1.masks[i], crop));
  }
  const bool rain_pair = opt.flow_pair == FlowPair::initial_to_rain;
  const Frame& s_t = s1.initial[t];
  const Frame& center_target = rain_pair ? clip.frames[t] : s_t;
  for (int slot : kNeighborSlots) {
    const int i = w.indices[slot];
    const Frame& s_i = s1.initial[i];
    w.base_to_center.push_back(crop_tensor(flows.base(s_i, center_target, rain_pair ? 0 : 1), crop));
    const Frame& neighbor_target = rain_pair ? clip.frames[i] : s_i;
    w.base_from_center.push_back(crop_tensor(flows.base(s_t, neighbor_target, rain_pair ? 2 : 3), crop));
  }
  return w;
}

VideoNet::VideoNet(const AlignConfig& align, const DecoderConfig& dec) : align_(align), dec_(dec) {
  if (align.channels != dec.channels) throw std::invalid_argument("encoder and decoder channel counts differ");
}

ForwardResult VideoNet::forward(const Window& w, const FlowEstimator& flow, const Stage2Options& opt) const {
  if (w.rain.size() != 5) throw std::invalid_argument("stage 2 forward needs a 5-frame window");
  require_network_size(w.rain[2].height(), w.rain[2].width());
  ForwardResult r;
  const Frame& target = opt.flow_pair == FlowPair::initial_to_rain ? w.rain[2] : w.initial[2];
  for (int k = 0; k < 4; ++k) {
    const Frame& s_i = w.initial[kNeighborSlots[k]];
    Var s = Var::constant(s_i.pixels);
    if (opt.use_alignment) {
      Var f = flow.complete(s_i, target, w.base_to_center[k]);
      r.flows_to_center.push_back(f);
      r.warped.push_back(ops::warp(s, f));
    } else {
      r.flows_to_center.push_back(Var::constant(Tensor(Shape{2, s_i.height(), s_i.width()}, 0.0)));
      r.warped.push_back(s);
    }
  }
  r.center_features = align_.encode(Var::constant(w.rain[2].pixels));
  for (int k = 0; k < 4; ++k) {
    Var f = align_.encode(r.warped[k]);
    Var off = opt.use_alignment
                  ? align_.predict_offsets(f, r.center_features)
                  : Var::constant(Tensor(Shape{2 * kDeformTaps, f.value().height(), f.value().width()}, 0.0));
    r.neighbor_features.push_back(f);
    r.offsets.push_back(off);
    r.aligned.push_back(align_.align(f, off));
  }
  if (opt.residual) r.base = ops::mean(r.warped);
  r.output = dec_.decode(r.aligned, r.base);
  return r;
}

void VideoNet::save_to(Archive& a) const {
  align_.params().save_to(a, "align.");
  dec_.params().save_to(a, "decoder.");
}

void VideoNet::load_from(const Archive& a) {
  align_.params().load_from(a, "align.");
  dec_.params().load_from(a, "decoder.");
}

std::string VideoNet::hash() const {
  Archive a;
  save_to(a);
  return content_hash(a.to_bytes());
}

VideoForward videonet_forward(const VideoClip& clip, int t, const InitialNet& initial, const FlowEstimator& flow,
                              const VideoNet& net, const Stage2Options& opt) {
  validate_clip(clip);
  const std::vector<int> idx = window_indices(clip.size(), t, clip.window_radius, opt.boundary);
  // Stage 1 only on the frames this window reads.
  Stage1Results s1;
  s1.initial.resize(clip.size());
  s1.masks.resize(clip.size());
  for (int i : idx) {
    if (!s1.initial[i].pixels.empty()) continue;
    const Frame& f = clip.frames[i];
    s1.initial[i] = opt.use_initial ? restore_single(f, initial) : f;
    s1.masks[i] = opt.use_mask ? compute_mask(f, s1.initial[i], opt.tau, opt.mask_mode) : full_mask(f.height(), f.width());
  }
  FlowCache cache(flow);
  Window w = make_window(clip, s1, cache, t, opt);
  ForwardResult r = net.forward(w, flow, opt);

  VideoForward out;
  out.output = Frame{r.output.value(), t};
  out.masks = w.masks;
  out.reflected = w.reflected;
  for (int k = 0; k < 4; ++k)
    out.flows.push_back(FlowField{r.flows_to_center[k].value(), w.indices[kNeighborSlots[k]], t});
  return out;
}

ClipRestoration restore_clip(const VideoClip& clip, const InitialNet& initial, const FlowEstimator& flow,
                             const VideoNet& net, Stage2Options opt, int jobs) {
  validate_clip(clip);
  if (jobs < 1) throw std::invalid_argument("jobs must be ≥ 1");
  opt.boundary = BoundaryPolicy::reflect;
  const Stage1Results s1 = run_stage1(clip, initial, opt);
  FlowCache cache(flow);
  std::vector<Window> windows;
  for (int t = 0; t < clip.size(); ++t) windows.push_back(make_window(clip, s1, cache, t, opt));

  ClipRestoration out;
  out.initial = s1.initial;
  out.output.resize(clip.size());
  out.masks.resize(clip.size());
  out.flows.resize(clip.size());
  auto run = [&](int t) {
    const Window& w = windows[t];
    ForwardResult r = net.forward(w, flow, opt);
    out.output[t] = Frame{r.output.value(), t};
    out.masks[t] = w.masks;
    for (int k = 0; k < 4; ++k)
      out.flows[t].push_back(FlowField{r.flows_to_center[k].value(), w.indices[kNeighborSlots[k]], t});
  };
  if (jobs == 1) {
    for (int t = 0; t < clip.size(); ++t) run(t);
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j)
      pool.emplace_back([&, j] {
        for (int t = j; t < clip.size(); t += jobs) run(t);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace dropvid
