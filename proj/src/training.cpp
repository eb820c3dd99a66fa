#include "dropvid/training.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "dropvid/log.hpp"

namespace dropvid {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <class T>
T parse_number(const std::string& s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

struct Field {
  const char* name;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define DV_INT(key)                                                                  \
  Field { #key, [](const TrainConfig& c) { return std::to_string(c.key); },          \
          [](TrainConfig& c, const std::string& v) { c.key = parse_number<int>(v); } }
#define DV_U64(key)                                                                  \
  Field { #key, [](const TrainConfig& c) { return std::to_string(c.key); },          \
          [](TrainConfig& c, const std::string& v) { c.key = parse_number<std::uint64_t>(v); } }
#define DV_DBL(key)                                                                  \
  Field { #key, [](const TrainConfig& c) { return fmt_double(c.key); },              \
          [](TrainConfig& c, const std::string& v) { c.key = parse_number<double>(v); } }
#define DV_BOOL(key)                                                                 \
  Field { #key, [](const TrainConfig& c) { return std::string(c.key ? "true" : "false"); }, \
          [](TrainConfig& c, const std::string& v) { c.key = parse_bool(v); } }
#define DV_STR(key)                                                                  \
  Field { #key, [](const TrainConfig& c) { return c.key; },                          \
          [](TrainConfig& c, const std::string& v) { c.key = v; } }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      DV_INT(crop_size),          DV_INT(batch_size),        DV_DBL(lr_stage1),
      DV_DBL(lr_stage2),          DV_DBL(lr_flow_finetune),  DV_INT(steps_stage1),
      DV_INT(steps_stage2),       DV_U64(seed),              DV_DBL(lambda_t),
      DV_DBL(tau),                DV_INT(window_radius),     DV_DBL(adversarial_weight),
      DV_DBL(clip_norm),          DV_BOOL(finetune_flow),    DV_BOOL(stop_gradient_neighbors),
      DV_INT(init_width),         DV_INT(init_attention_width), DV_INT(feature_channels),
      DV_DBL(offset_bound),       DV_STR(flow_backend),      DV_BOOL(use_mask),
      DV_BOOL(use_initial),       DV_BOOL(use_alignment),    DV_BOOL(use_temporal),
      DV_BOOL(residual),          DV_STR(mask_mode),         DV_STR(flow_pair),
      DV_BOOL(loss_flow),         DV_BOOL(loss_mask_ct),     DV_BOOL(loss_mask_cl),
      DV_BOOL(loss_temp),
  };
  return f;
}

#undef DV_INT
#undef DV_U64
#undef DV_DBL
#undef DV_BOOL
#undef DV_STR

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "hard") return MaskMode::hard;
  if (s == "soft") return MaskMode::soft;
  throw std::invalid_argument("mask_mode must be hard or soft, got '" + s + "'");
}

FlowPair parse_flow_pair(const std::string& s) {
  if (s == "initial-rain") return FlowPair::initial_to_rain;
  if (s == "initial-initial") return FlowPair::initial_to_initial;
  throw std::invalid_argument("flow_pair must be initial-rain or initial-initial, got '" + s + "'");
}

Tensor crop_pixels(const Tensor& t, const CropRect& c) {
  if (c.height == 0) return t;
  Tensor out(Shape{t.channels(), c.height, c.width});
  for (int ch = 0; ch < t.channels(); ++ch)
    for (int y = 0; y < c.height; ++y)
      for (int x = 0; x < c.width; ++x) out.at(ch, y, x) = t.at(ch, c.y0 + y, c.x0 + x);
  return out;
}

CropRect random_crop(int h, int w, int size, Rng& rng) {
  if (h < size || w < size)
    throw std::invalid_argument("frames " + std::to_string(h) + "×" + std::to_string(w) + " are smaller than crop_size " +
                                std::to_string(size));
  if (h == size && w == size) return {};
  std::uniform_int_distribution<int> dy(0, h - size), dx(0, w - size);
  const int y0 = dy(rng);
  const int x0 = dx(rng);
  return {y0, x0, size, size};
}

}  // namespace

TrainConfig parse_config(const std::string& text, const TrainConfig& base) {
  TrainConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = nullptr;
    for (const Field& cand : fields())
      if (key == cand.name) f = &cand;
    if (!f) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      f->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  validate_config(cfg);
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += std::string(f.name) + " = " + f.get(cfg) + "\n";
  return out;
}

void validate_config(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (c.crop_size < kMinFrameSide || c.crop_size % kEncoderStride)
    fail("crop_size must be ≥ 64 and divisible by 4");
  if (c.batch_size < 1) fail("batch_size must be ≥ 1");
  if (c.steps_stage1 < 0 || c.steps_stage2 < 0) fail("step counts must be ≥ 0");
  for (double lr : {c.lr_stage1, c.lr_stage2, c.lr_flow_finetune})
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail("learning rates must be finite and ≥ 0");
  if (!(c.lambda_t >= 0.0)) fail("lambda_t must be ≥ 0");
  if (!(c.tau > 0.0)) fail("tau must be positive");
  if (c.window_radius != 2) fail("window_radius must be 2 (the decoder takes four neighbors)");
  if (c.feature_channels < 4 || c.feature_channels % 4) fail("feature_channels must be a positive multiple of 4");
  if (c.init_width < 2 || c.init_width % 2) fail("init_width must be even");
  if (c.init_attention_width < 1) fail("init_attention_width must be ≥ 1");
  if (!(c.offset_bound > 0.0)) fail("offset_bound must be positive");
  parse_flow_backend(c.flow_backend);
  parse_mask_mode(c.mask_mode);
  parse_flow_pair(c.flow_pair);
}

Stage2Options stage2_options(const TrainConfig& cfg) {
  Stage2Options o;
  o.use_initial = cfg.use_initial;
  o.use_mask = cfg.use_mask;
  o.use_alignment = cfg.use_alignment;
  o.residual = cfg.residual;
  o.mask_mode = parse_mask_mode(cfg.mask_mode);
  o.tau = cfg.tau;
  o.flow_pair = parse_flow_pair(cfg.flow_pair);
  return o;
}

InitialNetConfig initial_config(const TrainConfig& cfg) {
  InitialNetConfig c;
  c.width = cfg.init_width;
  c.attention_width = cfg.init_attention_width;
  c.seed = cfg.seed * 7919 + 3;
  return c;
}

AlignConfig align_config(const TrainConfig& cfg) {
  AlignConfig c;
  c.channels = cfg.feature_channels;
  c.offset_bound = cfg.offset_bound;
  c.seed = cfg.seed * 7919 + 7;
  return c;
}

DecoderConfig decoder_config(const TrainConfig& cfg) {
  DecoderConfig c;
  c.channels = cfg.feature_channels;
  c.seed = cfg.seed * 7919 + 5;
  return c;
}

double effective_lambda_t(const TrainConfig& cfg) { return cfg.use_temporal ? cfg.lambda_t : 0.0; }

std::vector<Stage1Step> train_stage1(const PairedData& data, InitialNet& net, const TrainConfig& cfg,
                                     const Stage1Logger& log) {
  validate_config(cfg);
  if (data.rain.empty() || data.rain.size() != data.clean.size())
    throw std::invalid_argument("stage 1 needs (rain, clean) pairs; got " + std::to_string(data.rain.size()) +
                                " rain and " + std::to_string(data.clean.size()) + " clean frames");
  for (std::size_t i = 0; i < data.rain.size(); ++i) require_same_shape(data.rain[i].pixels, data.clean[i].pixels, "stage 1 pair");

  Rng rng(cfg.seed);
  Adam gen({ParamGroup{net.params().vars(), cfg.lr_stage1}});
  Adam disc({ParamGroup{net.disc_params().vars(), cfg.lr_stage1}});
  std::uniform_int_distribution<std::size_t> pick(0, data.rain.size() - 1);
  std::vector<Stage1Step> history;
  for (int step = 1; step <= cfg.steps_stage1; ++step) {
    std::vector<Var> rains, cleans;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t i = pick(rng);
      const CropRect c = random_crop(data.rain[i].height(), data.rain[i].width(), cfg.crop_size, rng);
      rains.push_back(Var::constant(crop_pixels(data.rain[i].pixels, c)));
      cleans.push_back(Var::constant(crop_pixels(data.clean[i].pixels, c)));
    }
    gen.zero_grad();
    std::vector<Var> pix, per, adv, tot;
    std::vector<Var> fakes;
    for (int b = 0; b < cfg.batch_size; ++b) {
      Var s = net.restore(rains[b]);
      fakes.push_back(Var::constant(s.value()));
      SingleImageLoss l = single_image_loss(cleans[b], s, net.discriminate(s), net.perceptual(cleans[b]),
                                            net.perceptual(s), cfg.adversarial_weight);
      pix.push_back(l.pixel);
      per.push_back(l.perceptual);
      adv.push_back(l.adversarial);
      tot.push_back(l.total);
    }
    Var total = ops::mean(tot);
    backward(total);
    gen.step(cfg.clip_norm);

    disc.zero_grad();
    std::vector<Var> dl;
    for (int b = 0; b < cfg.batch_size; ++b)
      dl.push_back(discriminator_loss(net.discriminate(cleans[b]), net.discriminate(fakes[b])));
    Var d = ops::mean(dl);
    if (cfg.adversarial_weight > 0.0) {
      backward(d);
      disc.step(cfg.clip_norm);
    }

    Stage1Step rec{step, ops::mean(pix).item(), ops::mean(per).item(), ops::mean(adv).item(), total.item(), d.item()};
    if (!std::isfinite(rec.total)) throw std::runtime_error("stage 1 loss became non-finite at step " + std::to_string(step));
    history.push_back(rec);
    if (log) log(rec);
  }
  return history;
}

namespace {

std::vector<ParamGroup> stage2_groups(VideoNet& net, FlowEstimator& flow, const TrainConfig& cfg) {
  std::vector<Var> model = net.align().params().vars();
  for (const Var& v : net.decoder().params().vars()) model.push_back(v);
  std::vector<ParamGroup> g{ParamGroup{model, cfg.lr_stage2}};
  if (cfg.finetune_flow && flow.backend() == FlowBackend::toy)
    g.push_back(ParamGroup{flow.params().vars(), cfg.lr_flow_finetune});
  return g;
}

}  // namespace

Stage2Trainer::Stage2Trainer(const std::vector<VideoClip>& clips, const InitialNet& stage1, FlowEstimator& flow,
                             VideoNet& net, const TrainConfig& cfg)
    : clips_(clips),
      stage1_(stage1),
      flow_(flow),
      net_(net),
      cfg_(cfg),
      opt_(stage2_options(cfg)),
      weights_{effective_lambda_t(cfg)},
      adam_(stage2_groups(net, flow, cfg)),
      rng_(cfg.seed) {
  validate_config(cfg);
  if (clips.empty()) throw std::invalid_argument("stage 2 needs at least one clip");
  neighbor_opt_ = opt_;
  neighbor_opt_.boundary = BoundaryPolicy::reflect;
  for (const VideoClip& c : clips) {
    validate_clip(c);
    if (c.size() < 2 * cfg.window_radius + 1)
      throw std::invalid_argument("clip has " + std::to_string(c.size()) + " frames; a window needs " +
                                  std::to_string(2 * cfg.window_radius + 1));
    s1_.push_back(run_stage1(c, stage1, opt_));
    caches_.emplace_back(flow);
  }
}

Stage2Trainer::Terms Stage2Trainer::losses(int ci, int t, const CropRect& crop) {
  const VideoClip& clip = clips_[ci];
  Window w = make_window(clip, s1_[ci], caches_[ci], t, opt_, crop);
  ForwardResult r = net_.forward(w, flow_, opt_);

  const bool rain_pair = opt_.flow_pair == FlowPair::initial_to_rain;
  std::vector<Var> flows;
  std::vector<Tensor> rain_n, init_n;
  std::vector<RaindropMask> masks_n;
  for (int k = 0; k < 4; ++k) {
    const int slot = kNeighborSlots[k];
    const Frame& tgt = rain_pair ? w.rain[slot] : w.initial[slot];
    flows.push_back(flow_.complete(w.initial[2], tgt, w.base_from_center[k]));
    rain_n.push_back(w.rain[slot].pixels);
    init_n.push_back(w.initial[slot].pixels);
    masks_n.push_back(w.masks[slot]);
  }

  Terms out;
  auto zero = [] { return Var::constant(Tensor(Shape{1}, 0.0)); };
  out.flow = cfg_.loss_flow ? flow_term(w.initial[2].pixels, init_n, masks_n, flows) : zero();
  out.ct = cfg_.loss_mask_ct ? mask_consistency_loss(r.output, w.rain[2].pixels, w.masks[2]) : zero();
  out.cl = cfg_.loss_mask_cl ? mask_correlation_loss(r.output, rain_n, masks_n, flows) : zero();
  if (cfg_.loss_temp && weights_.lambda_t > 0.0) {
    std::vector<Var> outs;
    for (int k = 0; k < 4; ++k) {
      Window wi = make_window(clip, s1_[ci], caches_[ci], w.indices[kNeighborSlots[k]], neighbor_opt_, crop);
      Var o = net_.forward(wi, flow_, neighbor_opt_).output;
      outs.push_back(cfg_.stop_gradient_neighbors ? Var::constant(o.value()) : o);
    }
    out.temp = temporal_consistency_loss(r.output, outs, masks_n, flows);
  } else {
    out.temp = zero();
  }
  out.total = ops::sum({out.flow, out.ct, out.cl, ops::scale(out.temp, weights_.lambda_t)});
  return out;
}

LossReport Stage2Trainer::step() {
  const int s = cfg_.window_radius;
  std::uniform_int_distribution<int> pick_clip(0, static_cast<int>(clips_.size()) - 1);
  adam_.zero_grad();
  std::vector<Var> totals;
  double f = 0, ct = 0, cl = 0, tp = 0;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const int ci = pick_clip(rng_);
    const VideoClip& clip = clips_[ci];
    std::uniform_int_distribution<int> pick_t(s, clip.size() - 1 - s);
    const int t = pick_t(rng_);
    const CropRect crop = random_crop(clip.frames[0].height(), clip.frames[0].width(), cfg_.crop_size, rng_);
    Terms l = losses(ci, t, crop);
    f += l.flow.item();
    ct += l.ct.item();
    cl += l.cl.item();
    tp += l.temp.item();
    totals.push_back(l.total);
  }
  const double n = cfg_.batch_size;
  LossReport rep = total_loss(f / n, ct / n, cl / n, tp / n, weights_);
  Var total = ops::mean(totals);
  if (total.requires_grad()) {
    backward(total);
    adam_.step(cfg_.clip_norm);
  }
  ++steps_;
  return rep;
}

std::vector<LossReport> Stage2Trainer::run(int steps, const Stage2Logger& log) {
  std::vector<LossReport> out;
  for (int i = 0; i < steps; ++i) {
    out.push_back(step());
    if (log) log(steps_, out.back());
  }
  return out;
}

LossReport Stage2Trainer::evaluate(int clip, int t) {
  Terms l = losses(clip, t, {});
  return total_loss(l.flow.item(), l.ct.item(), l.cl.item(), l.temp.item(), weights_);
}

std::string loss_json_line(int step, const LossReport& r) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["flow"] = r.flow;
  j["mask_ct"] = r.mask_ct;
  j["mask_cl"] = r.mask_cl;
  j["temp"] = r.temp;
  j["total"] = r.total;
  return j.dump();
}

void save_stage1(const std::filesystem::path& path, const InitialNet& net) {
  Archive a;
  net.save_to(a);
  a.put_scalar("meta.width", net.config().width);
  a.put_scalar("meta.attention_width", net.config().attention_width);
  a.put_scalar("meta.attention_steps", net.config().attention_steps);
  a.save(path);
}

InitialNet load_stage1(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("stage-1 checkpoint not found: " + path.string());
  Archive a = Archive::load(path);
  InitialNetConfig c;
  c.width = static_cast<int>(a.get_scalar("meta.width"));
  c.attention_width = static_cast<int>(a.get_scalar("meta.attention_width"));
  c.attention_steps = static_cast<int>(a.get_scalar("meta.attention_steps"));
  InitialNet net(c);
  net.load_from(a);
  return net;
}

void save_stage2(const std::filesystem::path& path, const VideoNet& net, const Stage2Options& opt) {
  Archive a;
  net.save_to(a);
  a.put_scalar("meta.opt.use_initial", opt.use_initial);
  a.put_scalar("meta.opt.use_mask", opt.use_mask);
  a.put_scalar("meta.opt.use_alignment", opt.use_alignment);
  a.put_scalar("meta.opt.residual", opt.residual);
  a.put_scalar("meta.opt.soft_mask", opt.mask_mode == MaskMode::soft);
  a.put_scalar("meta.opt.tau", opt.tau);
  a.put_scalar("meta.opt.initial_pair", opt.flow_pair == FlowPair::initial_to_initial);
  a.put_scalar("meta.channels", net.align().config().channels);
  a.put_scalar("meta.offset_bound", net.align().config().offset_bound);
  a.save(path);
}

VideoNet load_stage2(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("stage-2 checkpoint not found: " + path.string());
  Archive a = Archive::load(path);
  AlignConfig ac;
  ac.channels = static_cast<int>(a.get_scalar("meta.channels"));
  ac.offset_bound = a.get_scalar("meta.offset_bound");
  DecoderConfig dc;
  dc.channels = ac.channels;
  VideoNet net(ac, dc);
  net.load_from(a);
  return net;
}

Stage2Options load_stage2_options(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("stage-2 checkpoint not found: " + path.string());
  const Archive a = Archive::load(path);
  Stage2Options o;
  auto flag = [&](const char* key, bool fallback) { return a.contains(key) ? a.get_scalar(key) != 0.0 : fallback; };
  o.use_initial = flag("meta.opt.use_initial", o.use_initial);
  o.use_mask = flag("meta.opt.use_mask", o.use_mask);
  o.use_alignment = flag("meta.opt.use_alignment", o.use_alignment);
  o.residual = flag("meta.opt.residual", o.residual);
  o.mask_mode = flag("meta.opt.soft_mask", false) ? MaskMode::soft : MaskMode::hard;
  if (a.contains("meta.opt.tau")) o.tau = a.get_scalar("meta.opt.tau");
  o.flow_pair = flag("meta.opt.initial_pair", false) ? FlowPair::initial_to_initial : FlowPair::initial_to_rain;
  return o;
}

void save_flow(const std::filesystem::path& path, const FlowEstimator& flow) {
  Archive a;
  flow.params().save_to(a, "flow.");
  const PyramidSettings& ps = flow.pyramid();
  a.put_scalar("meta.pyramid.levels", ps.levels);
  a.put_scalar("meta.pyramid.iterations", ps.iterations);
  a.put_scalar("meta.pyramid.window_sigma", ps.window_sigma);
  a.put_scalar("meta.pyramid.regularization", ps.regularization);
  a.put_scalar("meta.pyramid.smooth_sigma", ps.smooth_sigma);
  a.put_scalar("meta.pyramid.max_step", ps.max_step);
  a.put_scalar("meta.finetune_lr", flow.finetune_lr);
  a.put_scalar("meta.backend", flow.backend() == FlowBackend::toy ? 0.0 : 1.0);
  a.save(path);
}

FlowEstimator load_flow(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("flow checkpoint not found: " + path.string());
  Archive a = Archive::load(path);
  FlowEstimator est(a.get_scalar("meta.backend") == 0.0 ? FlowBackend::toy : FlowBackend::external);
  est.params().load_from(a, "flow.");
  PyramidSettings& ps = est.pyramid();
  if (a.contains("meta.pyramid.levels")) {
    ps.levels = static_cast<int>(a.get_scalar("meta.pyramid.levels"));
    ps.iterations = static_cast<int>(a.get_scalar("meta.pyramid.iterations"));
    ps.window_sigma = a.get_scalar("meta.pyramid.window_sigma");
    ps.regularization = a.get_scalar("meta.pyramid.regularization");
    ps.smooth_sigma = a.get_scalar("meta.pyramid.smooth_sigma");
    ps.max_step = a.get_scalar("meta.pyramid.max_step");
  }
  if (a.contains("meta.finetune_lr")) est.finetune_lr = a.get_scalar("meta.finetune_lr");
  return est;
}

}  // namespace dropvid
