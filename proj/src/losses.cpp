#include "dropvid/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "dropvid/log.hpp"

namespace dropvid {

namespace {

constexpr std::size_t kNeighbors = 4;

void require_neighbors(std::size_t n, const char* what) {
  if (n != kNeighbors)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(kNeighbors) + " neighbors, got " +
                                std::to_string(n));
}

Var masked_term(const Var& a, const Var& b, const RaindropMask& m, const char* what) {
  if (m.nonrain_weight.sum() == 0.0) log_warn(std::string(what) + ": frame is fully masked, term contributes 0");
  return ops::masked_mse(a, b, m.nonrain_weight);
}

// (1/n)·Σ masked_mse(warp(center, flow_i), target_i, mask_i).
Var warped_average(const Var& center, const std::vector<Var>& targets, const std::vector<RaindropMask>& masks,
                   const std::vector<Var>& flows, const char* what) {
  require_neighbors(targets.size(), what);
  require_neighbors(masks.size(), what);
  require_neighbors(flows.size(), what);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < kNeighbors; ++i)
    terms.push_back(masked_term(ops::warp(center, flows[i]), targets[i], masks[i], what));
  return ops::mean(terms);
}

std::vector<Var> constants(const std::vector<Tensor>& ts) {
  std::vector<Var> v;
  for (const Tensor& t : ts) v.push_back(Var::constant(t));
  return v;
}

void unpack(const std::vector<NeighborTerm>& n, std::vector<Var>& frames, std::vector<RaindropMask>& masks,
            std::vector<Var>& flows) {
  for (const NeighborTerm& t : n) {
    frames.push_back(Var::constant(t.frame.pixels));
    masks.push_back(t.mask);
    flows.push_back(Var::constant(t.flow_from_center.vectors));
  }
}

}  // namespace

Var mask_consistency_loss(const Var& output, const Tensor& rain, const RaindropMask& mask) {
  return masked_term(output, Var::constant(rain), mask, "mask consistency");
}

double mask_consistency_loss(const Frame& output, const Frame& rain, const RaindropMask& mask) {
  return mask_consistency_loss(Var::constant(output.pixels), rain.pixels, mask).item();
}

Var mask_correlation_loss(const Var& output, const std::vector<Tensor>& rain_neighbors,
                          const std::vector<RaindropMask>& masks, const std::vector<Var>& flows_from_center) {
  return warped_average(output, constants(rain_neighbors), masks, flows_from_center, "mask correlation");
}

double mask_correlation_loss(const Frame& output, const std::vector<NeighborTerm>& neighbors) {
  std::vector<Var> frames, flows;
  std::vector<RaindropMask> masks;
  unpack(neighbors, frames, masks, flows);
  return warped_average(Var::constant(output.pixels), frames, masks, flows, "mask correlation").item();
}

Var temporal_consistency_loss(const Var& output, const std::vector<Var>& neighbor_outputs,
                              const std::vector<RaindropMask>& masks, const std::vector<Var>& flows_from_center) {
  for (const Var& o : neighbor_outputs)
    if (!o.defined()) throw std::invalid_argument("temporal consistency: missing neighbor output");
  return warped_average(output, neighbor_outputs, masks, flows_from_center, "temporal consistency");
}

double temporal_consistency_loss(const Frame& output, const std::vector<NeighborTerm>& neighbor_outputs) {
  std::vector<Var> frames, flows;
  std::vector<RaindropMask> masks;
  unpack(neighbor_outputs, frames, masks, flows);
  return temporal_consistency_loss(Var::constant(output.pixels), frames, masks, flows).item();
}

Var flow_term(const Tensor& initial_center, const std::vector<Tensor>& initial_neighbors,
              const std::vector<RaindropMask>& masks, const std::vector<Var>& flows_from_center) {
  return warped_average(Var::constant(initial_center), constants(initial_neighbors), masks, flows_from_center,
                        "flow");
}

LossReport total_loss(double flow, double mask_ct, double mask_cl, double temp, const LossWeights& w) {
  const std::pair<const char*, double> terms[] = {{"flow", flow}, {"mask_ct", mask_ct}, {"mask_cl", mask_cl}, {"temp", temp}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string("loss term '") + name + "' is not finite");
    if (v < 0.0) throw std::invalid_argument(std::string("loss term '") + name + "' is negative");
  }
  if (!(w.lambda_t >= 0.0) || !std::isfinite(w.lambda_t)) throw std::invalid_argument("lambda_t must be finite and ≥ 0");
  LossReport r{flow, mask_ct, mask_cl, temp, w.lambda_t, 0.0};
  r.total = loss_total(r);
  return r;
}

}  // namespace dropvid
