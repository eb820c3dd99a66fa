#include "dropvid/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace dropvid::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_chw(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw std::invalid_argument(std::string(what) + ": expected C×H×W, got " + shape_str(t.shape()));
}

// Bilinear stencil at (x, y) with replicate borders. dwx/dwy are the partial
// derivatives of each corner weight w.r.t. the unclamped coordinate.
struct Stencil {
  std::size_t idx[4];
  double w[4];
  double dwx[4];
  double dwy[4];
  double ax;
  double ay;
};

inline Stencil make_stencil(double x, double y, int h, int w) {
  Stencil s{};
  const bool cx = x < 0.0 || x > w - 1;
  const bool cy = y < 0.0 || y > h - 1;
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  s.ax = ax;
  s.ay = ay;
  s.idx[0] = static_cast<std::size_t>(y0) * w + x0;
  s.idx[1] = static_cast<std::size_t>(y0) * w + x1;
  s.idx[2] = static_cast<std::size_t>(y1) * w + x0;
  s.idx[3] = static_cast<std::size_t>(y1) * w + x1;
  s.w[0] = (1.0 - ay) * (1.0 - ax);
  s.w[1] = (1.0 - ay) * ax;
  s.w[2] = ay * (1.0 - ax);
  s.w[3] = ay * ax;
  const double gx = cx ? 0.0 : 1.0;
  const double gy = cy ? 0.0 : 1.0;
  s.dwx[0] = -(1.0 - ay) * gx;
  s.dwx[1] = (1.0 - ay) * gx;
  s.dwx[2] = -ay * gx;
  s.dwx[3] = ay * gx;
  s.dwy[0] = -(1.0 - ax) * gy;
  s.dwy[1] = -ax * gy;
  s.dwy[2] = (1.0 - ax) * gy;
  s.dwy[3] = ax * gy;
  return s;
}

inline double gather(const double* plane, const Stencil& s) {
  // Written as nested lerps so that integer positions reproduce the source bit-exactly.
  const double ax = s.ax;
  const double ay = s.ay;
  const double top = (1.0 - ax) * plane[s.idx[0]] + ax * plane[s.idx[1]];
  const double bot = (1.0 - ax) * plane[s.idx[2]] + ax * plane[s.idx[3]];
  return (1.0 - ay) * top + ay * bot;
}

template <typename F>
Var unary(const Var& x, F&& f, std::function<double(double, double)> df) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  Tensor saved = out;
  return make_op(std::move(out), {x}, [x, saved = std::move(saved), df](const Tensor& g, std::span<Tensor* const> pg) {
    const Tensor& xv = x.value();
    Tensor& gx = *pg[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], saved[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return make_op(a.value() + b.value(), {a, b}, [](const Tensor& g, std::span<Tensor* const> pg) {
    if (pg[0]) *pg[0] += g;
    if (pg[1]) *pg[1] += g;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return make_op(a.value() - b.value(), {a, b}, [](const Tensor& g, std::span<Tensor* const> pg) {
    if (pg[0]) *pg[0] += g;
    if (pg[1]) *pg[1] -= g;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> pg) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (pg[0]) (*pg[0])[i] += g[i] * b.value()[i];
      if (pg[1]) (*pg[1])[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a}, [s](const Tensor& g, std::span<Tensor* const> pg) {
    Tensor& ga = *pg[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var sum(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("sum of an empty list");
  Tensor out = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) out += xs[i].value();
  return make_op(std::move(out), xs, [](const Tensor& g, std::span<Tensor* const> pg) {
    for (Tensor* p : pg)
      if (p) *p += g;
  });
}

Var mean(const std::vector<Var>& xs) { return scale(sum(xs), 1.0 / static_cast<double>(xs.size())); }

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double in, double) { return in > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double out) { return out * (1.0 - out); });
}

Var clamp(const Var& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double in, double) { return (in > lo && in < hi) ? 1.0 : 0.0; });
}

Var logit(const Var& x, double eps) {
  return unary(
      x,
      [eps](double v) {
        const double c = std::clamp(v, eps, 1.0 - eps);
        return std::log(c / (1.0 - c));
      },
      [eps](double in, double) {
        if (in <= eps || in >= 1.0 - eps) return 0.0;
        return 1.0 / (in * (1.0 - in));
      });
}

Var log_one_minus(const Var& x, double eps) {
  return unary(
      x, [eps](double v) { return std::log(1.0 - v + eps); },
      [eps](double in, double) { return -1.0 / (1.0 - in + eps); });
}

Var mean_all(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  Tensor out(Shape{1}, x.value().sum() / n);
  return make_op(std::move(out), {x}, [n](const Tensor& g, std::span<Tensor* const> pg) {
    Tensor& gx = *pg[0];
    const double v = g[0] / n;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += v;
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat of an empty list");
  const int h = xs[0].value().height();
  const int w = xs[0].value().width();
  int c = 0;
  std::vector<std::size_t> sizes;
  for (const Var& v : xs) {
    require_chw(v.value(), "concat_channels");
    if (v.value().height() != h || v.value().width() != w)
      throw std::invalid_argument("concat_channels: spatial size mismatch");
    c += v.value().channels();
    sizes.push_back(v.value().size());
  }
  Tensor out(Shape{c, h, w});
  std::size_t off = 0;
  for (const Var& v : xs) {
    std::copy(v.value().storage().begin(), v.value().storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.value().size();
  }
  return make_op(std::move(out), xs, [sizes](const Tensor& g, std::span<Tensor* const> pg) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < pg.size(); ++k) {
      if (pg[k]) {
        double* dst = pg[k]->data();
        for (std::size_t i = 0; i < sizes[k]; ++i) dst[i] += g[off + i];
      }
      off += sizes[k];
    }
  });
}

Var slice_channels(const Var& x, int begin, int count) {
  const Tensor& xv = x.value();
  require_chw(xv, "slice_channels");
  if (begin < 0 || count <= 0 || begin + count > xv.channels())
    throw std::invalid_argument("slice_channels: range out of bounds");
  const std::size_t plane = static_cast<std::size_t>(xv.height()) * xv.width();
  Tensor out(Shape{count, xv.height(), xv.width()});
  std::copy_n(xv.data() + begin * plane, count * plane, out.data());
  return make_op(std::move(out), {x}, [begin, plane](const Tensor& g, std::span<Tensor* const> pg) {
    double* dst = pg[0]->data() + begin * plane;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var crop(const Var& x, int y0, int x0, int h, int w) {
  const Tensor& xv = x.value();
  require_chw(xv, "crop");
  if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > xv.height() || x0 + w > xv.width())
    throw std::invalid_argument("crop: window outside tensor");
  const int c = xv.channels();
  Tensor out(Shape{c, h, w});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(k, y, xx) = xv.at(k, y0 + y, x0 + xx);
  return make_op(std::move(out), {x}, [y0, x0](const Tensor& g, std::span<Tensor* const> pg) {
    Tensor& gx = *pg[0];
    for (int k = 0; k < g.channels(); ++k)
      for (int y = 0; y < g.height(); ++y)
        for (int xx = 0; xx < g.width(); ++xx) gx.at(k, y0 + y, x0 + xx) += g.at(k, y, xx);
  });
}

Var pixel_shuffle(const Var& x, int r) {
  const Tensor& xv = x.value();
  require_chw(xv, "pixel_shuffle");
  if (r < 1 || xv.channels() % (r * r) != 0)
    throw std::invalid_argument("pixel_shuffle: channels not divisible by r²");
  const int c = xv.channels() / (r * r);
  const int h = xv.height();
  const int w = xv.width();
  Tensor out(Shape{c, h * r, w * r});
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < r; ++j)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) out.at(k, y * r + i, xx * r + j) = xv.at(k * r * r + i * r + j, y, xx);
  return make_op(std::move(out), {x}, [r, c, h, w](const Tensor& g, std::span<Tensor* const> pg) {
    Tensor& gx = *pg[0];
    for (int k = 0; k < c; ++k)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) gx.at(k * r * r + i * r + j, y, xx) += g.at(k, y * r + i, xx * r + j);
  });
}

Var avg_pool(const Var& x, int r) {
  const Tensor& xv = x.value();
  require_chw(xv, "avg_pool");
  if (r < 1 || xv.height() % r != 0 || xv.width() % r != 0)
    throw std::invalid_argument("avg_pool: size not divisible by " + std::to_string(r));
  const int c = xv.channels();
  const int h = xv.height() / r;
  const int w = xv.width() / r;
  const double inv = 1.0 / (r * r);
  Tensor out(Shape{c, h, w});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        double s = 0.0;
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < r; ++j) s += xv.at(k, y * r + i, xx * r + j);
        out.at(k, y, xx) = s * inv;
      }
  return make_op(std::move(out), {x}, [r, inv](const Tensor& g, std::span<Tensor* const> pg) {
    Tensor& gx = *pg[0];
    for (int k = 0; k < g.channels(); ++k)
      for (int y = 0; y < g.height(); ++y)
        for (int xx = 0; xx < g.width(); ++xx) {
          const double v = g.at(k, y, xx) * inv;
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j) gx.at(k, y * r + i, xx * r + j) += v;
        }
  });
}

namespace {

struct ConvGeom {
  int cin, h, w, kh, kw, ho, wo;
  ConvSpec spec;
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t n = static_cast<std::size_t>(g.ho) * g.wo;
  for (int c = 0; c < g.cin; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        double* row = cols + ((static_cast<std::size_t>(c) * g.kh + i) * g.kw + j) * n;
        const double* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.spec.stride - g.spec.pad + i * g.spec.dilation;
          double* out = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(out, g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.spec.stride - g.spec.pad + j * g.spec.dilation;
            out[ox] = (ix < 0 || ix >= g.w) ? 0.0 : src[ix];
          }
        }
      }
}

void col2im(const double* cols, const ConvGeom& g, double* x) {
  const std::size_t n = static_cast<std::size_t>(g.ho) * g.wo;
  for (int c = 0; c < g.cin; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        const double* row = cols + ((static_cast<std::size_t>(c) * g.kh + i) * g.kw + j) * n;
        double* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.spec.stride - g.spec.pad + i * g.spec.dilation;
          if (iy < 0 || iy >= g.h) continue;
          const double* in = row + static_cast<std::size_t>(oy) * g.wo;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.spec.stride - g.spec.pad + j * g.spec.dilation;
            if (ix >= 0 && ix < g.w) dst[ix] += in[ox];
          }
        }
      }
}

// out = W·cols + b, and the matching backward for W, b, cols.
Tensor gemm_forward(const Tensor& weight, const Var& bias, const std::vector<double>& cols, int co, std::size_t k,
                    int ho, int wo) {
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  Tensor out(Shape{co, ho, wo});
  MapMat o(out.data(), co, static_cast<Eigen::Index>(n));
  o.noalias() = CMapMat(weight.data(), co, static_cast<Eigen::Index>(k)) *
                CMapMat(cols.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  if (bias.defined()) {
    for (int c = 0; c < co; ++c) o.row(c).array() += bias.value()[static_cast<std::size_t>(c)];
  }
  return out;
}

void gemm_backward(const Tensor& g, const Tensor& weight, const std::vector<double>& cols, std::size_t k,
                   Tensor* gw, Tensor* gb, std::vector<double>* gcols) {
  const int co = g.channels();
  const auto n = static_cast<Eigen::Index>(g.size() / static_cast<std::size_t>(co));
  CMapMat gm(g.data(), co, n);
  if (gw) {
    MapMat(gw->data(), co, static_cast<Eigen::Index>(k)).noalias() +=
        gm * CMapMat(cols.data(), static_cast<Eigen::Index>(k), n).transpose();
  }
  if (gb) {
    for (int c = 0; c < co; ++c) (*gb)[static_cast<std::size_t>(c)] += gm.row(c).sum();
  }
  if (gcols) {
    gcols->assign(k * static_cast<std::size_t>(n), 0.0);
    MapMat(gcols->data(), static_cast<Eigen::Index>(k), n).noalias() =
        CMapMat(weight.data(), co, static_cast<Eigen::Index>(k)).transpose() * gm;
  }
}

void check_conv_args(const Tensor& x, const Tensor& w, const Var& bias, const char* what) {
  require_chw(x, what);
  if (w.rank() != 4) throw std::invalid_argument(std::string(what) + ": weight must be Co×Ci×kh×kw");
  if (w.dim(1) != x.channels())
    throw std::invalid_argument(std::string(what) + ": input has " + std::to_string(x.channels()) +
                                " channels, weight expects " + std::to_string(w.dim(1)));
  if (bias.defined() && (bias.value().size() != static_cast<std::size_t>(w.dim(0))))
    throw std::invalid_argument(std::string(what) + ": bias size mismatch");
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvSpec spec) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  check_conv_args(xv, wv, bias, "conv2d");
  ConvGeom geom{xv.channels(), xv.height(), xv.width(), wv.dim(2), wv.dim(3), 0, 0, spec};
  geom.ho = (geom.h + 2 * spec.pad - spec.dilation * (geom.kh - 1) - 1) / spec.stride + 1;
  geom.wo = (geom.w + 2 * spec.pad - spec.dilation * (geom.kw - 1) - 1) / spec.stride + 1;
  if (geom.ho <= 0 || geom.wo <= 0) throw std::invalid_argument("conv2d: input too small for kernel");
  const std::size_t k = static_cast<std::size_t>(geom.cin) * geom.kh * geom.kw;
  std::vector<double> cols(k * static_cast<std::size_t>(geom.ho) * geom.wo);
  im2col(xv.data(), geom, cols.data());
  Tensor out = gemm_forward(wv, bias, cols, wv.dim(0), k, geom.ho, geom.wo);
  std::vector<Var> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op(std::move(out), std::move(parents),
                 [weight, geom, k, cols = std::move(cols)](const Tensor& g, std::span<Tensor* const> pg) {
                   Tensor* gb = pg.size() > 2 ? pg[2] : nullptr;
                   std::vector<double> gcols;
                   gemm_backward(g, weight.value(), cols, k, pg[1], gb, pg[0] ? &gcols : nullptr);
                   if (pg[0]) col2im(gcols.data(), geom, pg[0]->data());
                 });
}

Var warp(const Var& img, const Var& flow) {
  const Tensor& iv = img.value();
  const Tensor& fv = flow.value();
  require_chw(iv, "warp");
  require_chw(fv, "warp");
  if (fv.channels() != 2 || fv.height() != iv.height() || fv.width() != iv.width())
    throw std::invalid_argument("warp: flow must be 2×H×W matching the image, got " + shape_str(fv.shape()) +
                                " for image " + shape_str(iv.shape()));
  const int c = iv.channels();
  const int h = iv.height();
  const int w = iv.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Stencil> st(plane);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      st[p] = make_stencil(x + fv[p], y + fv[plane + p], h, w);
    }
  Tensor out(iv.shape());
  for (int k = 0; k < c; ++k) {
    const double* src = iv.data() + k * plane;
    double* dst = out.data() + k * plane;
    for (std::size_t p = 0; p < plane; ++p) dst[p] = gather(src, st[p]);
  }
  return make_op(std::move(out), {img, flow},
                 [img, c, plane, st = std::move(st)](const Tensor& g, std::span<Tensor* const> pg) {
                   const Tensor& iv = img.value();
                   for (int k = 0; k < c; ++k) {
                     const double* gk = g.data() + k * plane;
                     const double* src = iv.data() + k * plane;
                     for (std::size_t p = 0; p < plane; ++p) {
                       const Stencil& s = st[p];
                       if (pg[0]) {
                         double* gi = pg[0]->data() + k * plane;
                         for (int j = 0; j < 4; ++j) gi[s.idx[j]] += gk[p] * s.w[j];
                       }
                       if (pg[1]) {
                         double dx = 0.0;
                         double dy = 0.0;
                         for (int j = 0; j < 4; ++j) {
                           dx += s.dwx[j] * src[s.idx[j]];
                           dy += s.dwy[j] * src[s.idx[j]];
                         }
                         (*pg[1])[p] += gk[p] * dx;
                         (*pg[1])[plane + p] += gk[p] * dy;
                       }
                     }
                   }
                 });
}

Var deform_conv(const Var& x, const Var& offsets, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& ov = offsets.value();
  const Tensor& wv = weight.value();
  check_conv_args(xv, wv, bias, "deform_conv");
  const int kh = wv.dim(2);
  const int kw = wv.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("deform_conv: kernel must be odd");
  const int taps = kh * kw;
  require_chw(ov, "deform_conv offsets");
  if (ov.channels() != 2 * taps || ov.height() != xv.height() || ov.width() != xv.width())
    throw std::invalid_argument("deform_conv: offsets must be " + std::to_string(2 * taps) + "×H×W, got " +
                                shape_str(ov.shape()));
  const int cin = xv.channels();
  const int h = xv.height();
  const int w = xv.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const int ph = kh / 2;
  const int pw = kw / 2;

  std::vector<Stencil> st(static_cast<std::size_t>(taps) * plane);
  for (int ky = 0; ky < kh; ++ky)
    for (int kx = 0; kx < kw; ++kx) {
      const int t = ky * kw + kx;
      const double* ox = ov.data() + (2 * t) * plane;
      const double* oy = ov.data() + (2 * t + 1) * plane;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const std::size_t p = static_cast<std::size_t>(y) * w + xx;
          st[t * plane + p] = make_stencil(xx + (kx - pw) + ox[p], y + (ky - ph) + oy[p], h, w);
        }
    }
  const std::size_t k = static_cast<std::size_t>(cin) * taps;
  std::vector<double> cols(k * plane);
  for (int c = 0; c < cin; ++c) {
    const double* src = xv.data() + c * plane;
    for (int t = 0; t < taps; ++t) {
      double* row = cols.data() + (static_cast<std::size_t>(c) * taps + t) * plane;
      const Stencil* s = st.data() + t * plane;
      for (std::size_t p = 0; p < plane; ++p) row[p] = gather(src, s[p]);
    }
  }
  Tensor out = gemm_forward(wv, bias, cols, wv.dim(0), k, h, w);
  std::vector<Var> parents{x, offsets, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op(
      std::move(out), std::move(parents),
      [x, weight, cin, taps, plane, k, st = std::move(st), cols = std::move(cols)](const Tensor& g,
                                                                                    std::span<Tensor* const> pg) {
        Tensor* gb = pg.size() > 3 ? pg[3] : nullptr;
        const bool need_cols = pg[0] || pg[1];
        std::vector<double> gcols;
        gemm_backward(g, weight.value(), cols, k, pg[2], gb, need_cols ? &gcols : nullptr);
        if (!need_cols) return;
        const Tensor& xv = x.value();
        for (int c = 0; c < cin; ++c) {
          const double* src = xv.data() + c * plane;
          for (int t = 0; t < taps; ++t) {
            const double* gr = gcols.data() + (static_cast<std::size_t>(c) * taps + t) * plane;
            const Stencil* s = st.data() + t * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              const double gv = gr[p];
              if (gv == 0.0) continue;
              if (pg[0]) {
                double* gi = pg[0]->data() + c * plane;
                for (int j = 0; j < 4; ++j) gi[s[p].idx[j]] += gv * s[p].w[j];
              }
              if (pg[1]) {
                double dx = 0.0;
                double dy = 0.0;
                for (int j = 0; j < 4; ++j) {
                  dx += s[p].dwx[j] * src[s[p].idx[j]];
                  dy += s[p].dwy[j] * src[s[p].idx[j]];
                }
                (*pg[1])[(2 * t) * plane + p] += gv * dx;
                (*pg[1])[(2 * t + 1) * plane + p] += gv * dy;
              }
            }
          }
        }
      });
}

Var masked_mse(const Var& a, const Var& b, const Tensor& weight) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "masked_mse");
  require_chw(av, "masked_mse");
  if (weight.rank() != 3 || weight.channels() != 1 || weight.height() != av.height() || weight.width() != av.width())
    throw std::invalid_argument("masked_mse: weight must be 1×H×W, got " + shape_str(weight.shape()));
  const int c = av.channels();
  const std::size_t plane = weight.size();
  const double wsum = weight.sum();
  if (wsum <= 0.0) {
    return make_op(Tensor(Shape{1}, 0.0), {a, b}, [](const Tensor&, std::span<Tensor* const>) {});
  }
  const double norm = 1.0 / (c * wsum);
  double acc = 0.0;
  for (int k = 0; k < c; ++k)
    for (std::size_t p = 0; p < plane; ++p) {
      const double wp = weight[p];
      if (wp == 0.0) continue;
      const double d = av[k * plane + p] - bv[k * plane + p];
      acc += wp * d * d;
    }
  return make_op(Tensor(Shape{1}, acc * norm), {a, b},
                 [a, b, weight, c, plane, norm](const Tensor& g, std::span<Tensor* const> pg) {
                   const Tensor& av = a.value();
                   const Tensor& bv = b.value();
                   const double s = 2.0 * norm * g[0];
                   for (int k = 0; k < c; ++k)
                     for (std::size_t p = 0; p < plane; ++p) {
                       const double wp = weight[p];
                       if (wp == 0.0) continue;
                       const std::size_t i = k * plane + p;
                       const double d = s * wp * (av[i] - bv[i]);
                       if (pg[0]) (*pg[0])[i] += d;
                       if (pg[1]) (*pg[1])[i] -= d;
                     }
                 });
}

Var mse(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mse");
  const double n = static_cast<double>(av.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    acc += d * d;
  }
  return make_op(Tensor(Shape{1}, acc / n), {a, b}, [a, b, n](const Tensor& g, std::span<Tensor* const> pg) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const double s = 2.0 * g[0] / n;
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = s * (av[i] - bv[i]);
      if (pg[0]) (*pg[0])[i] += d;
      if (pg[1]) (*pg[1])[i] -= d;
    }
  });
}

}  // namespace dropvid::ops
