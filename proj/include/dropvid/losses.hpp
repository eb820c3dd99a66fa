#pragma once

#include <vector>

#include "dropvid/core_types.hpp"
#include "dropvid/flow.hpp"

namespace dropvid {

struct LossWeights {
  double lambda_t = 0.5;

  // λ_t regimes: the initial setting, the later tuned one, and the final one.
  static LossWeights initial_preset() { return {1.0}; }
  static LossWeights tuned_preset() { return {0.1}; }
  static LossWeights final_preset() { return {0.5}; }
};

// Masked mean squared error between O_t and I_t on non-raindrop pixels.
// A fully masked frame gives 0 and a warning.
Var mask_consistency_loss(const Var& output, const Tensor& rain, const RaindropMask& mask);
double mask_consistency_loss(const Frame& output, const Frame& rain, const RaindropMask& mask);

// One neighbor's contribution: the frame compared against the warped output,
// its mask and the flow F_{t→i}.
struct NeighborTerm {
  Frame frame;
  RaindropMask mask;
  FlowField flow_from_center;
};

// (1/n)·Σ_i masked_mse(warp(O_t, F_{t→i}), I_i, mask_i), n = 4.
Var mask_correlation_loss(const Var& output, const std::vector<Tensor>& rain_neighbors,
                          const std::vector<RaindropMask>& masks, const std::vector<Var>& flows_from_center);
double mask_correlation_loss(const Frame& output, const std::vector<NeighborTerm>& neighbors);

// (1/n)·Σ_i masked_mse(warp(O_t, F_{t→i}), O_i, mask_i), n = 4.
Var temporal_consistency_loss(const Var& output, const std::vector<Var>& neighbor_outputs,
                              const std::vector<RaindropMask>& masks, const std::vector<Var>& flows_from_center);
double temporal_consistency_loss(const Frame& output, const std::vector<NeighborTerm>& neighbor_outputs);

// (1/n)·Σ_i masked_mse(warp(S_t, F_{t→i}), S_i, mask_i): the masked flow term.
Var flow_term(const Tensor& initial_center, const std::vector<Tensor>& initial_neighbors,
              const std::vector<RaindropMask>& masks, const std::vector<Var>& flows_from_center);

// Weighted total. Rejects non-finite or negative components, naming the term.
LossReport total_loss(double flow, double mask_ct, double mask_cl, double temp, const LossWeights& w = {});

}  // namespace dropvid
