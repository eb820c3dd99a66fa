#include "dropvid/eval.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dropvid/image_io.hpp"
#include "dropvid/initial_net.hpp"
#include "dropvid/ops.hpp"

namespace dropvid {

namespace {

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;

std::array<double, 2 * kSsimRadius + 1> ssim_kernel() {
  std::array<double, 2 * kSsimRadius + 1> g{};
  double s = 0.0;
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
    g[i + kSsimRadius] = std::exp(-(i * i) / (2.0 * kSsimSigma * kSsimSigma));
    s += g[i + kSsimRadius];
  }
  for (double& v : g) v /= s;
  return g;
}

// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const double* p, int h, int w) {
  static const auto g = ssim_kernel();
  const int k = 2 * kSsimRadius + 1;
  const int ow = w - k + 1, oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * p[y * w + x + i];
      tmp[y * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_cell(const std::string& s) {
  if (s == "inf") return kPsnrInfinity;
  if (s == "-inf") return -kPsnrInfinity;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::invalid_argument("bad CSV number '" + s + "'");
  return v;
}

double mean_finite_aware(const std::vector<double>& v) {
  double s = 0.0;
  int n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    s += x;
    ++n;
  }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double frame_mse(const Frame& a, const Frame& b) {
  require_same_shape(a.pixels, b.pixels, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    s += d * d;
  }
  return s / static_cast<double>(a.pixels.size());
}

double psnr(const Frame& a, const Frame& b) {
  const double m = frame_mse(a, b);
  return m == 0.0 ? kPsnrInfinity : 10.0 * std::log10(1.0 / m);
}

double masked_psnr(const Frame& a, const Frame& b, const Tensor& region) {
  require_same_shape(a.pixels, b.pixels, "masked psnr");
  if (region.rank() != 3 || region.channels() != 1 || region.height() != a.height() || region.width() != a.width())
    throw std::invalid_argument("masked psnr: region must be 1×H×W");
  const std::size_t plane = region.size();
  double s = 0.0, n = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (region[p] > 0.0) {
        const double d = a.pixels[c * plane + p] - b.pixels[c * plane + p];
        s += d * d;
        n += 1.0;
      }
  if (n == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return s == 0.0 ? kPsnrInfinity : 10.0 * std::log10(n / s);
}

double ssim(const Frame& fa, const Frame& fb, const SsimOptions& opt) {
  require_same_shape(fa.pixels, fb.pixels, "ssim");
  const int h = fa.height(), w = fa.width();
  const int k = 2 * kSsimRadius + 1;
  if (h < k || w < k) throw std::invalid_argument("ssim needs frames of at least 11×11");
  const Tensor a = opt.quantize ? quantize8(fa.pixels) : fa.pixels;
  const Tensor b = opt.quantize ? quantize8(fb.pixels) : fb.pixels;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    const double* pa = a.data() + c * plane;
    const double* pb = b.data() + c * plane;
    std::vector<double> aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto ma = filter_valid(pa, h, w), mb = filter_valid(pb, h, w);
    const auto saa = filter_valid(aa.data(), h, w), sbb = filter_valid(bb.data(), h, w), sab = filter_valid(ab.data(), h, w);
    double acc = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i];
      const double vb = sbb[i] - mb[i] * mb[i];
      const double cov = sab[i] - ma[i] * mb[i];
      acc += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(ma.size());
  }
  return total / a.channels();
}

double temporal_warp_error(const VideoClip& outputs, const std::vector<FlowField>& flows,
                           const std::vector<RaindropMask>& masks) {
  const std::size_t n = outputs.frames.size();
  if (n < 2) throw std::invalid_argument("temporal warp error needs at least 2 frames");
  if (flows.size() != n - 1 || masks.size() != n - 1)
    throw std::invalid_argument("temporal warp error needs " + std::to_string(n - 1) + " flows and masks, got " +
                                std::to_string(flows.size()) + " and " + std::to_string(masks.size()));
  double s = 0.0;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    Var warped = ops::warp(Var::constant(outputs.frames[t].pixels), Var::constant(flows[t].vectors));
    s += ops::masked_mse(warped, Var::constant(outputs.frames[t + 1].pixels), masks[t].nonrain_weight).item();
  }
  return s / static_cast<double>(n - 1);
}

std::string to_string(MaskSource m) {
  switch (m) {
    case MaskSource::ground_truth: return "ground-truth";
    case MaskSource::initial_evidence: return "evidence";
    case MaskSource::none: return "none";
  }
  return "none";
}

EvalReport evaluate_frames(const std::string& video, const std::vector<Frame>& restored, const std::vector<Frame>& gt,
                           const std::vector<Tensor>& regions, MaskSource source, const FlowEstimator& flow) {
  if (restored.size() != gt.size() || restored.empty())
    throw std::invalid_argument("evaluate: " + std::to_string(restored.size()) + " restored vs " +
                                std::to_string(gt.size()) + " ground-truth frames");
  EvalReport r;
  r.video = video;
  r.mask_source = source;
  std::vector<double> ps, ss, ms;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    FrameScores f;
    f.psnr = psnr(restored[i], gt[i]);
    f.ssim = ssim(restored[i], gt[i]);
    f.masked_psnr = regions.empty() ? std::numeric_limits<double>::quiet_NaN() : masked_psnr(restored[i], gt[i], regions[i]);
    ps.push_back(f.psnr);
    ss.push_back(f.ssim);
    ms.push_back(f.masked_psnr);
    r.frames.push_back(f);
  }
  r.psnr = mean_finite_aware(ps);
  r.ssim = mean_finite_aware(ss);
  r.masked_psnr = mean_finite_aware(ms);
  if (gt.size() >= 2) {
    VideoClip outs;
    std::vector<FlowField> flows;
    std::vector<RaindropMask> masks;
    for (std::size_t i = 0; i < gt.size(); ++i) outs.frames.push_back(Frame{restored[i].pixels, static_cast<int>(i)});
    for (std::size_t i = 0; i + 1 < gt.size(); ++i) {
      flows.push_back(flow.estimate(Frame{gt[i].pixels, static_cast<int>(i)}, Frame{gt[i + 1].pixels, static_cast<int>(i + 1)}));
      masks.push_back(full_mask(gt[i].height(), gt[i].width()));
    }
    r.temporal_warp_error = temporal_warp_error(outs, flows, masks);
  }
  return r;
}

EvalReport evaluate_method(const EvalInputs& in, const FlowEstimator& flow) {
  const auto restored_files = list_frames(in.restored_dir);
  const auto gt_files = list_frames(in.gt_dir);
  std::set<std::string> rn, gn;
  for (const auto& p : restored_files) rn.insert(p.filename().string());
  for (const auto& p : gt_files) gn.insert(p.filename().string());
  std::vector<std::string> missing, extra;
  for (const auto& n : gn)
    if (!rn.count(n)) missing.push_back(n);
  for (const auto& n : rn)
    if (!gn.count(n)) extra.push_back(n);
  if (!missing.empty() || !extra.empty()) {
    std::ostringstream os;
    os << "restored and ground-truth frames differ;";
    if (!missing.empty()) {
      os << " missing from restored:";
      for (const auto& n : missing) os << ' ' << n;
    }
    if (!extra.empty()) {
      os << " not in ground truth:";
      for (const auto& n : extra) os << ' ' << n;
    }
    throw std::invalid_argument(os.str());
  }
  std::vector<Frame> restored, gt;
  std::vector<Tensor> regions;
  MaskSource source = MaskSource::none;
  for (std::size_t i = 0; i < gt_files.size(); ++i) {
    const std::string name = gt_files[i].filename().string();
    gt.push_back(read_frame_png(gt_files[i], static_cast<int>(i)));
    restored.push_back(read_frame_png(in.restored_dir / name, static_cast<int>(i)));
    if (gt.back().pixels.shape() != restored.back().pixels.shape())
      throw std::invalid_argument("frame " + name + " has different sizes in restored and ground truth");
    if (in.mask_dir) {
      source = MaskSource::ground_truth;
      Tensor m = read_gray_png(*in.mask_dir / name);
      for (double& v : m.values()) v = v > 0.5 ? 1.0 : 0.0;
      regions.push_back(std::move(m));
    } else if (in.rain_dir) {
      source = MaskSource::initial_evidence;
      RaindropMask m = compute_mask(read_frame_png(*in.rain_dir / name), restored.back(), in.tau);
      Tensor region = m.nonrain_weight;
      for (double& v : region.values()) v = 1.0 - v;
      regions.push_back(std::move(region));
    }
  }
  return evaluate_frames(in.video_name.empty() ? in.restored_dir.filename().string() : in.video_name, restored, gt,
                         regions, source, flow);
}

std::string report_csv(const std::vector<EvalReport>& reports) {
  std::string out = "video,psnr,ssim,masked_psnr,temporal_warp_error\n";
  std::vector<double> p, s, m, t;
  for (const EvalReport& r : reports) {
    if (r.video.find_first_of(",\n\"") != std::string::npos)
      throw std::invalid_argument("video name '" + r.video + "' cannot be written to CSV");
    out += r.video + "," + fmt(r.psnr) + "," + fmt(r.ssim) + "," + fmt(r.masked_psnr) + "," + fmt(r.temporal_warp_error) + "\n";
    p.push_back(r.psnr);
    s.push_back(r.ssim);
    m.push_back(r.masked_psnr);
    t.push_back(r.temporal_warp_error);
  }
  out += "mean," + fmt(mean_finite_aware(p)) + "," + fmt(mean_finite_aware(s)) + "," + fmt(mean_finite_aware(m)) + "," +
         fmt(mean_finite_aware(t)) + "\n";
  return out;
}

std::vector<CsvRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "video,psnr,ssim,masked_psnr,temporal_warp_error")
    throw std::invalid_argument("CSV header must be video,psnr,ssim,masked_psnr,temporal_warp_error");
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw std::invalid_argument("CSV row needs 5 cells: " + line);
    rows.push_back({cells[0], parse_cell(cells[1]), parse_cell(cells[2]), parse_cell(cells[3]), parse_cell(cells[4])});
  }
  return rows;
}

}  // namespace dropvid
