#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "costformer/cost_volume.hpp"
#include "costformer/params.hpp"
#include "costformer/window_attention.hpp"

namespace costformer {

enum class AttentionVariant {
  spatial_only,   // X^ = DA-MSA1(LN(X)) + X
  depth_spatial,  // X^ = DA-MSA1(LN(DA-MSA2(LN(X)))) + X
};

template <typename T>
struct PatchEmbedParams {
  std::array<std::size_t, 2> patch{4, 4};  // (h, w); the depth extent is always 1
  LinearParams<T> proj;                    // (h * w * G) -> E
  LayerNormParams<T> norm;                 // over E; undefined gamma means no normalization
};

// One depth-aware transformer layer. The same parameters serve regular (DATL) and shifted
// (DASTL) windows; the window spec decides which.
template <typename T>
struct DatlParams {
  AttentionVariant variant = AttentionVariant::depth_spatial;
  LayerNormParams<T> norm1;
  AttentionParams<T> depth_attention;    // DA-MSA2, unused for spatial_only
  LayerNormParams<T> norm_depth;         // between DA-MSA2 and DA-MSA1
  AttentionParams<T> spatial_attention;  // DA-MSA1
  LayerNormParams<T> norm2;
  LinearParams<T> fc1;
  LinearParams<T> fc2;
};

template <typename T>
struct RdactParams {
  PatchEmbedParams<T> embed;
  WindowSpec window;  // unshifted extents; DASTL layers use the shifted variant
  std::vector<std::pair<DatlParams<T>, DatlParams<T>>> layers;  // (DATL_k, DASTL_k)
  LinearParams<T> rec;                                          // E -> G, applied after un-patching
};

struct RdactConfig {
  std::size_t layers = 4;  // L pairs
  std::size_t embed_dim = 8;
  std::array<std::size_t, 2> patch{4, 4};
  Extents3 window{7, 7, 2};
  std::size_t heads = 2;
  std::size_t mlp_ratio = 4;
  AttentionVariant variant = AttentionVariant::depth_spatial;
};

// [H x W x D x G] -> [H* x W* x D x E], zero-padding H, W up to patch multiples.
template <typename T>
Var<T> patch_embed(const Var<T>& volume, const PatchEmbedParams<T>& params);

// Un-patches tokens [H* x W* x D x E] to the (H, W, D) grid by nearest-neighbor replication,
// projecting E to proj.out_dim().
template <typename T>
Var<T> re_embed(const Var<T>& tokens, const LinearParams<T>& proj, const Extents3& grid,
                const std::array<std::size_t, 2>& patch);

// Windows [Nw x T x E] from window_partition.
template <typename T>
Var<T> da_sa1(const Var<T>& windows, const AttentionParams<T>& params, const WindowPartition& partition);
template <typename T>
Var<T> da_sa2(const Var<T>& windows, const AttentionParams<T>& params, const WindowPartition& partition);

// Token grid [H* x W* x D* x E] -> same shape.
template <typename T>
Var<T> transformer_layer(const Var<T>& x, const DatlParams<T>& params, const WindowSpec& spec);
template <typename T>
Var<T> datl_forward(const Var<T>& x, const DatlParams<T>& params, const Extents3& window);
template <typename T>
Var<T> dastl_forward(const Var<T>& x, const DatlParams<T>& params, const Extents3& window);

// C_out = REC(C_L) + C_0.
template <typename T>
CostVolume<T> rdact_forward(const CostVolume<T>& c0, const RdactParams<T>& params);

template <typename T>
AttentionParams<T> make_attention_params(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                                         std::size_t heads, std::size_t table_rows, bool zero_output);

template <typename T>
DatlParams<T> make_datl_params(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                               std::size_t heads, std::size_t mlp_ratio, const Extents3& window,
                               AttentionVariant variant);

template <typename T>
RdactParams<T> make_rdact_params(ParamStore<T>& store, const std::string& prefix, const RdactConfig& config,
                                 std::size_t groups);

}  // namespace costformer
