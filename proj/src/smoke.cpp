#include "dropvid/smoke.hpp"

namespace dropvid {

SmokeClip make_smoke_clip(std::uint64_t seed, int frames, int size) {
  SmokeClip s;
  s.clean = make_translating_scene(frames, size, size, s.vx, s.vy, seed);
  s.drop.cx = size * 0.5;
  s.drop.cy = size * 0.45;
  s.drop.ra = 7.0;
  s.drop.rb = 6.0;
  DropTrajectory t;
  t.shape = s.drop;
  std::vector<DropTrajectory> traj{t};
  s.rain = synthesize_clip(s.clean, traj, std::hypot(s.vx, s.vy), seed + 1);
  return s;
}

PairedData make_stage1_pairs(int count, int size, std::uint64_t seed) {
  PairedData d;
  Rng rng(seed);
  DropSampling ds;
  ds.min_radius = 5.0;
  ds.max_radius = 12.0;
  std::uniform_int_distribution<int> n_drops(2, 5);
  for (int i = 0; i < count; ++i) {
    // Seeds far from the smoke clip's so stage 1 never sees its background.
    VideoClip scene = make_translating_scene(1, size, size, 0, 0, seed * 1000003ULL + 77 + i);
    std::vector<RaindropShape> drops;
    for (const DropTrajectory& t : random_trajectories(n_drops(rng), size, size, ds, rng)) drops.push_back(t.shape);
    Composite c = composite_drops(scene.frames[0], drops, seed + i);
    d.rain.push_back(Frame{c.frame.pixels, i});
    d.clean.push_back(Frame{scene.frames[0].pixels, i});
  }
  return d;
}

Tensor drop_region(const Frame& clean, std::span<const RaindropShape> drops) {
  Tensor r(Shape{1, clean.height(), clean.width()}, 0.0);
  for (int y = 0; y < clean.height(); ++y)
    for (int x = 0; x < clean.width(); ++x)
      for (const RaindropShape& d : drops)
        if (drop_alpha(d, x, y) > 0.0) r.at(0, y, x) = 1.0;
  return r;
}

SmokeScores score_smoke(const SmokeClip& sc, const InitialNet& initial, const FlowEstimator& flow, const VideoNet& net,
                        const Stage2Options& opt) {
  const VideoClip& rain = sc.rain.rain;
  const int r = rain.window_radius;
  const ClipRestoration cr = restore_clip(rain, initial, flow, net, opt);
  std::vector<Frame> s, o, gt;
  std::vector<Tensor> regions;
  for (int t = r; t + r < rain.size(); ++t) {
    // S_t always from stage 1, even when the ablated video path skips it.
    s.push_back(restore_single(rain.frames[t], initial));
    o.push_back(cr.output[t]);
    gt.push_back(sc.clean.frames[t]);
    regions.push_back(drop_region(sc.clean.frames[t], sc.rain.drops[t]));
  }
  return {evaluate_frames("initial", s, gt, regions, MaskSource::ground_truth, flow),
          evaluate_frames("video", o, gt, regions, MaskSource::ground_truth, flow)};
}

}  // namespace dropvid
