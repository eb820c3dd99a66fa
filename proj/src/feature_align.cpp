#include "dropvid/feature_align.hpp"

#include <sstream>

namespace dropvid {

AlignEncoder::AlignEncoder(const AlignConfig& cfg) : cfg_(cfg) {
  if (cfg.channels < 2 || cfg.channels % 2) throw std::invalid_argument("feature channels must be even and ≥ 2");
  Rng rng(cfg.seed);
  const int c = cfg.channels;
  enc1_ = Conv2d(params_, "encoder.conv1", 3, c / 2, 3, {2, 1, 1}, rng);
  enc2_ = Conv2d(params_, "encoder.conv2", c / 2, c, 3, {2, 1, 1}, rng);
  enc3_ = Conv2d(params_, "encoder.conv3", c, c, 3, {1, 1, 1}, rng);
  off1_ = Conv2d(params_, "offsets.conv1", 2 * c, c, 3, {1, 1, 1}, rng);
  // Zero-initialized so alignment starts as a plain convolution.
  off2_ = Conv2d(params_, "offsets.conv2", c, 2 * kDeformTaps, 3, {1, 1, 1}, rng, /*zero_init=*/true);
  deform_w_ = params_.add("deform.weight", he_uniform({c, c, 3, 3}, c * 9, rng));
  deform_b_ = params_.add("deform.bias", Tensor(Shape{c}, 0.0));
}

Var AlignEncoder::encode(const Var& x) const {
  const Tensor& v = x.value();
  if (v.rank() != 3 || v.height() % kEncoderStride || v.width() % kEncoderStride) {
    std::ostringstream os;
    os << "encode: input " << shape_str(v.shape()) << " must have H and W divisible by " << kEncoderStride;
    if (v.rank() == 3)
      os << "; pad by " << (kEncoderStride - v.height() % kEncoderStride) % kEncoderStride << " rows and "
         << (kEncoderStride - v.width() % kEncoderStride) % kEncoderStride << " columns";
    throw std::invalid_argument(os.str());
  }
  Var h = ops::leaky_relu(enc1_(x));
  h = ops::leaky_relu(enc2_(h));
  return enc3_(h);
}

Var AlignEncoder::predict_offsets(const Var& neighbor, const Var& center) const {
  require_same_shape(neighbor.value(), center.value(), "predict_offsets");
  Var h = ops::leaky_relu(off1_(ops::concat_channels({neighbor, center})));
  return ops::clamp(off2_(h), -cfg_.offset_bound, cfg_.offset_bound);
}

Var AlignEncoder::align(const Var& neighbor, const Var& offsets) const {
  return ops::deform_conv(neighbor, offsets, deform_w_, deform_b_);
}

FeatureMap AlignEncoder::encode(const Frame& x) const {
  return FeatureMap{encode(Var::constant(x.pixels)).value(), x.time_index};
}

OffsetField AlignEncoder::predict_offsets(const FeatureMap& neighbor, const FeatureMap& center) const {
  return OffsetField{predict_offsets(Var::constant(neighbor.activations), Var::constant(center.activations)).value()};
}

FeatureMap AlignEncoder::deform_conv(const FeatureMap& neighbor, const OffsetField& offsets) const {
  return FeatureMap{align(Var::constant(neighbor.activations), Var::constant(offsets.offsets)).value(),
                    neighbor.time_index};
}

}  // namespace dropvid
