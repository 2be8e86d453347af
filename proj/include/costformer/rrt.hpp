#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "costformer/cost_volume.hpp"
#include "costformer/params.hpp"
#include "costformer/rdact.hpp"

namespace costformer {

// Transformer over a single-channel cost [H x W x D] that treats D as the channel axis.
template <typename T>
struct RrtParams {
  PatchEmbedParams<T> embed;  // (p * p * D) -> E_r, no normalization
  WindowSpec window{{8, 8, 1}, false};
  std::vector<std::pair<DatlParams<T>, DatlParams<T>>> layers;  // (RT_k, RST_k)
  LinearParams<T> rer;                                          // E_r -> D
};

struct RrtConfig {
  std::size_t layers = 2;
  std::size_t embed_dim = 32;
  std::size_t patch = 1;
  std::size_t window = 8;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 4;
};

// [H x W x D] -> [H* x W* x E_r]
template <typename T>
Var<T> rrt_embed(const AggregatedCost<T>& c, const PatchEmbedParams<T>& embed);

// RER(C_L) + C_0
template <typename T>
AggregatedCost<T> rrt_forward(const AggregatedCost<T>& c0, const RrtParams<T>& params);

template <typename T>
RrtParams<T> make_rrt_params(ParamStore<T>& store, const std::string& prefix, const RrtConfig& config,
                             std::size_t depth);

}  // namespace costformer
