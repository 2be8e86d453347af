#pragma once

#include <cstdint>
#include <vector>

#include "costformer/cost_volume.hpp"
#include "costformer/geometry.hpp"

namespace costformer {

struct LossTerms {
  std::vector<std::vector<double>> per_stage_per_iter;  // [stage][iteration]
  double l_ref = 0.0;
};

// depth(p) = sum_j softmax_j(c(p, .)) d_j; larger cost means a better match.
template <typename T>
Var<T> soft_argmin(const AggregatedCost<T>& c, const DepthHypotheses<T>& hyps);

inline constexpr double kSmoothL1Beta = 1.0;

// Mean smooth-L1 over valid pixels; an empty mask gives 0. `valid` may be empty (all valid).
template <typename T>
Var<T> stage_loss(const Var<T>& pred, const Tensor<T>& gt, const std::vector<std::uint8_t>& valid);

double smooth_l1(double x, double beta = kSmoothL1Beta);

double total_loss(const LossTerms& terms);

// Differentiable counterpart of total_loss over recorded terms.
template <typename T>
Var<T> sum_terms(const std::vector<Var<T>>& terms);

}  // namespace costformer
