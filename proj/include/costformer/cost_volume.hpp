#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "costformer/geometry.hpp"
#include "costformer/ops.hpp"

namespace costformer {

template <typename T>
struct CostVolume {
  Var<T> cost;  // [H x W x D x G]
  std::size_t groups = 1;
  std::size_t channels = 1;
};

template <typename T>
struct AggregatedCost {
  Var<T> cost;  // [H x W x D]
};

// S(p, j)^g = (G / C) * <F0(p)^g, F(p_j)^g>. Samples with mask 0 produce zero cost.
// `reference` is [H x W x C], `warped` is [H x W x D x C]; an empty mask means all valid.
template <typename T>
CostVolume<T> groupwise_correlation(const Var<T>& reference, const Var<T>& warped,
                                    const std::vector<std::uint8_t>& mask, std::size_t groups);

// Pixel-wise weighted mean over views; weights are [N x H x W], non-negative.
template <typename T>
CostVolume<T> fuse_views(const std::vector<CostVolume<T>>& per_view, const Var<T>& view_weights);

// Softmax over views of each view's mean group correlation per pixel, [N x H x W].
template <typename T>
Tensor<T> view_weights_from_costs(const std::vector<CostVolume<T>>& per_view);

// Per-voxel projection of the G-vector to a scalar (a stack of 1x1x1 convolutions with GELU
// between layers). The final layer must output 1 channel.
template <typename T>
AggregatedCost<T> reduce_groups(const CostVolume<T>& cv, const std::vector<LinearParams<T>>& proj);

template <typename T>
struct SpatialWindowParams {
  std::vector<std::array<double, 2>> base_offsets;  // fixed grid p_k as (dx, dy)
  LinearParams<T> offset_proj;                      // C -> 2 * K_e, learned per-pixel offsets
  std::vector<LinearParams<T>> weight_net;          // G -> ... -> 1, sigmoid on the output
  std::size_t groups = 1;
  double depth_temperature = 1.0;

  std::size_t kernel_size() const { return base_offsets.size(); }
};

std::vector<std::array<double, 2>> grid_offsets(std::size_t side, double dilation);

// Normalized weighted sum over K_e bilinear samples of the cost around each pixel, weighted by
// feature similarity w_k and inverse-depth similarity d_k. A pixel whose samples are all invalid
// keeps its own cost.
template <typename T>
AggregatedCost<T> adaptive_spatial_aggregate(const AggregatedCost<T>& c, const SpatialWindowParams<T>& params,
                                             const Var<T>& reference, const DepthHypotheses<T>& hyps);

// Building block of the aggregation: samples [P*K x D], weights [P x K], depth weights [P*K x D],
// validity per sample, center cost [P x D] -> [P x D].
template <typename T>
Var<T> weighted_window_average(const Var<T>& samples, const Var<T>& weights, const Var<T>& depth_weights,
                               const std::vector<std::uint8_t>& valid, const Var<T>& center);

}  // namespace costformer
