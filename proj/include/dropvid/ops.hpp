#pragma once

#include <vector>

#include "dropvid/autograd.hpp"

// Differentiable primitives on C×H×W tensors.
namespace dropvid::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum(const std::vector<Var>& xs);
Var mean(const std::vector<Var>& xs);

Var leaky_relu(const Var& x, double slope = 0.1);
Var sigmoid(const Var& x);
// Gradient is passed only where lo < x < hi.
Var clamp(const Var& x, double lo, double hi);
// log(x / (1 - x)) with x first clamped into [eps, 1 - eps].
Var logit(const Var& x, double eps = 1e-4);
// log(1 - x + eps), elementwise.
Var log_one_minus(const Var& x, double eps);
Var mean_all(const Var& x);

Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int begin, int count);
Var crop(const Var& x, int y0, int x0, int h, int w);
Var pixel_shuffle(const Var& x, int r);
Var avg_pool(const Var& x, int r);

struct ConvSpec {
  int stride = 1;
  int pad = 1;
  int dilation = 1;
};

// x: Ci×H×W, weight: Co×Ci×kh×kw, bias: Co (may be undefined). Zero padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvSpec spec = {});

// Backward (gather) warp with bilinear sampling and replicate borders:
// out(c, p) = img(c, p + flow(p)). flow: 2×H×W, channel 0 = x, channel 1 = y.
Var warp(const Var& img, const Var& flow);

// Deformable convolution (v1): stride 1, "same" output size, odd kernel.
// offsets: 2K×H×W with K = kh·kw, tap k = ky·kw + kx, channel 2k = x, 2k+1 = y.
// Samples use bilinear interpolation with replicate borders.
Var deform_conv(const Var& x, const Var& offsets, const Var& weight, const Var& bias);

// Σ w·(a−b)² / (C·Σ w) over a 1×H×W weight broadcast across channels.
// Returns 0 when the weight sums to zero.
Var masked_mse(const Var& a, const Var& b, const Tensor& weight);
Var mse(const Var& a, const Var& b);

}  // namespace dropvid::ops
