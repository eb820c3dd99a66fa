#include "dropvid/initial_net.hpp"

#include <cmath>
#include <stdexcept>

namespace dropvid {

InitialNet::InitialNet(const InitialNetConfig& cfg) : cfg_(cfg) {
  if (cfg.width < 2 || cfg.width % 2) throw std::invalid_argument("initial-net width must be even and ≥ 2");
  if (cfg.attention_steps < 1) throw std::invalid_argument("attention needs at least one step");
  Rng rng(cfg.seed);
  const int w = cfg.width;
  const int aw = cfg.attention_width;
  att1_ = Conv2d(gen_, "attention.conv1", 4, aw, 3, {1, 1, 1}, rng);
  att2_ = Conv2d(gen_, "attention.conv2", aw, aw, 3, {1, 2, 2}, rng);
  att3_ = Conv2d(gen_, "attention.conv3", aw, 1, 3, {1, 1, 1}, rng);

  e1_ = Conv2d(gen_, "gen.enc1", 4, w, 3, {1, 1, 1}, rng);
  e2_ = Conv2d(gen_, "gen.enc2", w, 2 * w, 3, {2, 1, 1}, rng);
  e3_ = Conv2d(gen_, "gen.enc3", 2 * w, 2 * w, 3, {2, 1, 1}, rng);
  mid1_ = Conv2d(gen_, "gen.mid1", 2 * w, 2 * w, 3, {1, 2, 2}, rng);
  mid2_ = Conv2d(gen_, "gen.mid2", 2 * w, 2 * w, 3, {1, 1, 1}, rng);
  up1_ = Conv2d(gen_, "gen.up1", 2 * w, 4 * w, 3, {1, 1, 1}, rng);
  dec1_ = Conv2d(gen_, "gen.dec1", 3 * w, w, 3, {1, 1, 1}, rng);
  up2_ = Conv2d(gen_, "gen.up2", w, 2 * w, 3, {1, 1, 1}, rng);
  dec2_ = Conv2d(gen_, "gen.dec2", w / 2 + w, w, 3, {1, 1, 1}, rng);
  out_ = Conv2d(gen_, "gen.out", w, 3, 3, {1, 1, 1}, rng, /*zero_init=*/true);

  d1_ = Conv2d(disc_, "conv1", 3, 8, 3, {2, 1, 1}, rng);
  d2_ = Conv2d(disc_, "conv2", 8, 16, 3, {2, 1, 1}, rng);
  d3_ = Conv2d(disc_, "conv3", 16, 1, 3, {1, 1, 1}, rng);

  Rng prng(cfg.seed + 1000);
  p1_ = Conv2d(percep_, "conv1", 3, 8, 3, {1, 1, 1}, prng);
  p2_ = Conv2d(percep_, "conv2", 8, 8, 3, {2, 1, 1}, prng);
  percep_.set_trainable(false);
}

Restoration InitialNet::forward(const Var& rain) const {
  const Tensor& v = rain.value();
  if (v.rank() != 3 || v.channels() != 3)
    throw std::invalid_argument("initial-net expects a 3×H×W frame, got " + shape_str(v.shape()));
  require_network_size(v.height(), v.width());

  Restoration r;
  Var a = Var::constant(Tensor(Shape{1, v.height(), v.width()}, 0.5));
  for (int s = 0; s < cfg_.attention_steps; ++s) {
    Var h = ops::leaky_relu(att1_(ops::concat_channels({rain, a})));
    h = ops::leaky_relu(att2_(h));
    a = ops::sigmoid(att3_(h));
    r.attention.push_back(a);
  }

  using ops::leaky_relu;
  Var x1 = leaky_relu(e1_(ops::concat_channels({rain, a})));
  Var x2 = leaky_relu(e2_(x1));
  Var x3 = leaky_relu(e3_(x2));
  Var m = leaky_relu(mid2_(leaky_relu(mid1_(x3))));
  Var u1 = leaky_relu(ops::pixel_shuffle(up1_(m), 2));
  Var y1 = leaky_relu(dec1_(ops::concat_channels({u1, x2})));
  Var u2 = leaky_relu(ops::pixel_shuffle(up2_(y1), 2));
  Var y2 = leaky_relu(dec2_(ops::concat_channels({u2, x1})));
  r.output = ops::clamp(ops::add(rain, out_(y2)), 0.0, 1.0);
  return r;
}

Var InitialNet::discriminate(const Var& img) const {
  Var h = ops::leaky_relu(d1_(img));
  h = ops::leaky_relu(d2_(h));
  return ops::mean_all(ops::sigmoid(d3_(h)));
}

Var InitialNet::perceptual(const Var& img) const {
  return ops::leaky_relu(p2_(ops::leaky_relu(p1_(img))));
}

void InitialNet::save_to(Archive& a) const {
  gen_.save_to(a, "gen.");
  disc_.save_to(a, "disc.");
  percep_.save_to(a, "percep.");
}

std::string InitialNet::hash() const {
  Archive a;
  save_to(a);
  return content_hash(a.to_bytes());
}

void InitialNet::load_from(const Archive& a) {
  gen_.load_from(a, "gen.");
  disc_.load_from(a, "disc.");
  percep_.load_from(a, "percep.");
}

Frame restore_single(const Frame& rain, const InitialNet& net) {
  return Frame{net.restore(Var::constant(rain.pixels)).value(), rain.time_index};
}

RaindropMask compute_mask(const Frame& rain, const Frame& initial, double tau, MaskMode mode) {
  require_same_shape(rain.pixels, initial.pixels, "compute_mask");
  const int c = rain.channels(), h = rain.height(), w = rain.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor evidence(Shape{1, h, w}, 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < plane; ++p)
      evidence[p] += std::abs(rain.pixels[ch * plane + p] - initial.pixels[ch * plane + p]);
  for (std::size_t p = 0; p < plane; ++p) evidence[p] /= c;
  return mask_from_evidence(std::move(evidence), tau, mode);
}

SingleImageLoss single_image_loss(const Var& clean, const Var& initial, const Var& disc_score, const Var& feat_clean,
                                  const Var& feat_initial, double adversarial_weight) {
  SingleImageLoss l;
  l.pixel = ops::mse(clean, initial);
  l.perceptual = ops::mse(feat_clean, feat_initial);
  l.adversarial = ops::log_one_minus(disc_score, kAdversarialEps);
  l.total = ops::sum({l.pixel, l.perceptual, ops::scale(l.adversarial, adversarial_weight)});
  return l;
}

Var discriminator_loss(const Var& d_real, const Var& d_fake) {
  Var one = Var::constant(Tensor(d_real.shape(), 1.0));
  Var real = ops::log_one_minus(ops::sub(one, d_real), kAdversarialEps);
  Var fake = ops::log_one_minus(d_fake, kAdversarialEps);
  return ops::scale(ops::add(real, fake), -1.0);
}

SingleImageLossValues single_image_loss(const Frame& clean, const Frame& initial, double disc_score,
                                        const FeatureMap& feat_clean, const FeatureMap& feat_initial) {
  if (!(disc_score > 0.0 && disc_score <= 1.0)) throw std::invalid_argument("disc_score must lie in (0,1]");
  SingleImageLoss l = single_image_loss(Var::constant(clean.pixels), Var::constant(initial.pixels),
                                        Var::constant(Tensor(Shape{1}, disc_score)),
                                        Var::constant(feat_clean.activations), Var::constant(feat_initial.activations));
  return {l.pixel.item(), l.perceptual.item(), l.adversarial.item(), l.total.item()};
}

}  // namespace dropvid
