#include "costformer/rdact.hpp"

#include <stdexcept>

namespace costformer {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

template <typename T>
Var<T> patch_embed(const Var<T>& volume, const PatchEmbedParams<T>& params) {
  const Shape& s = volume.shape();
  if (s.size() != 4) throw std::invalid_argument("patch_embed: volume must be [H x W x D x G]");
  const auto [ph, pw] = params.patch;
  if (ph == 0 || pw == 0) throw std::invalid_argument("patch_embed: patch extents must be >= 1");
  const std::size_t H = s[0], W = s[1], D = s[2], G = s[3];
  if (params.proj.in_dim() != ph * pw * G) throw std::invalid_argument("patch_embed: projection input must be h*w*G");
  const std::size_t Hs = ceil_div(H, ph), Ws = ceil_div(W, pw);
  auto rows = std::make_shared<std::vector<std::int64_t>>(Hs * Ws * D * ph * pw, -1);
  for (std::size_t a = 0; a < Hs; ++a) {
    for (std::size_t b = 0; b < Ws; ++b) {
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t token = (a * Ws + b) * D + d;
        for (std::size_t i = 0; i < ph; ++i) {
          for (std::size_t j = 0; j < pw; ++j) {
            const std::size_t y = a * ph + i, x = b * pw + j;
            if (y >= H || x >= W) continue;
            (*rows)[token * ph * pw + i * pw + j] = static_cast<std::int64_t>((y * W + x) * D + d);
          }
        }
      }
    }
  }
  Var<T> patches = gather_rows(volume, rows, {Hs, Ws, D, ph * pw * G});
  Var<T> tokens = linear(patches, params.proj);
  if (params.norm.gamma.defined()) tokens = layer_norm(tokens, params.norm);
  return tokens;
}

template <typename T>
Var<T> re_embed(const Var<T>& tokens, const LinearParams<T>& proj, const Extents3& grid,
                const std::array<std::size_t, 2>& patch) {
  const Shape& s = tokens.shape();
  if (s.size() != 4 || s[2] != grid[2]) throw std::invalid_argument("re_embed: token grid mismatch");
  if (s[0] != ceil_div(grid[0], patch[0]) || s[1] != ceil_div(grid[1], patch[1])) {
    throw std::invalid_argument("re_embed: token grid does not match the patching of the output grid");
  }
  Var<T> projected = linear(tokens, proj);
  const std::size_t H = grid[0], W = grid[1], D = grid[2];
  auto rows = std::make_shared<std::vector<std::int64_t>>(H * W * D);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t d = 0; d < D; ++d) {
        (*rows)[(y * W + x) * D + d] = static_cast<std::int64_t>(((y / patch[0]) * s[1] + x / patch[1]) * D + d);
      }
    }
  }
  return gather_rows(projected, rows, {H, W, D, proj.out_dim()});
}

template <typename T>
Var<T> da_sa1(const Var<T>& windows, const AttentionParams<T>& params, const WindowPartition& partition) {
  return multi_head_attention(windows, params, partition.spatial);
}

template <typename T>
Var<T> da_sa2(const Var<T>& windows, const AttentionParams<T>& params, const WindowPartition& partition) {
  return multi_head_attention(windows, params, partition.depth);
}

template <typename T>
Var<T> transformer_layer(const Var<T>& x, const DatlParams<T>& params, const WindowSpec& spec) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("transformer_layer: expected [H* x W* x D* x E]");
  const auto partition = make_window_partition({s[0], s[1], s[2]}, spec);
  Var<T> h = layer_norm(x, params.norm1);
  if (params.variant == AttentionVariant::depth_spatial) {
    h = window_reverse(da_sa2(window_partition(h, *partition), params.depth_attention, *partition), *partition);
    h = layer_norm(h, params.norm_depth);
  }
  Var<T> attended =
      window_reverse(da_sa1(window_partition(h, *partition), params.spatial_attention, *partition), *partition);
  Var<T> mid = add(attended, x);
  return add(mlp_gelu(layer_norm(mid, params.norm2), params.fc1, params.fc2), mid);
}

template <typename T>
Var<T> datl_forward(const Var<T>& x, const DatlParams<T>& params, const Extents3& window) {
  return transformer_layer(x, params, WindowSpec{window, false});
}

template <typename T>
Var<T> dastl_forward(const Var<T>& x, const DatlParams<T>& params, const Extents3& window) {
  return transformer_layer(x, params, WindowSpec{window, true});
}

template <typename T>
CostVolume<T> rdact_forward(const CostVolume<T>& c0, const RdactParams<T>& params) {
  const Shape& s = c0.cost.shape();
  if (s.size() != 4 || s[3] != c0.groups) throw std::invalid_argument("rdact_forward: cost volume must be [H,W,D,G]");
  if (params.rec.out_dim() != c0.groups) throw std::invalid_argument("rdact_forward: REC must output G channels");
  Var<T> tokens = patch_embed(c0.cost, params.embed);
  for (const auto& [datl, dastl] : params.layers) {
    tokens = datl_forward(tokens, datl, params.window.extents);
    tokens = dastl_forward(tokens, dastl, params.window.extents);
  }
  Var<T> restored = re_embed(tokens, params.rec, {s[0], s[1], s[2]}, params.embed.patch);
  return {add(restored, c0.cost), c0.groups, c0.channels};
}

template <typename T>
AttentionParams<T> make_attention_params(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                                         std::size_t heads, std::size_t table_rows, bool zero_output) {
  if (heads == 0 || dim % heads != 0) throw std::invalid_argument("attention: heads must divide the embedding dim");
  AttentionParams<T> p;
  p.heads = heads;
  p.query = make_linear(store, prefix + ".query", dim, dim);
  p.key = make_linear(store, prefix + ".key", dim, dim);
  p.value = make_linear(store, prefix + ".value", dim, dim);
  p.output = make_linear(store, prefix + ".output", dim, dim, zero_output ? Init::zeros : Init::fan_in_uniform);
  if (table_rows > 0) p.bias_table = store.add(prefix + ".bias_table", {table_rows, heads}, Init::trunc_normal);
  return p;
}

template <typename T>
DatlParams<T> make_datl_params(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                               std::size_t heads, std::size_t mlp_ratio, const Extents3& window,
                               AttentionVariant variant) {
  DatlParams<T> p;
  p.variant = variant;
  p.norm1 = make_layer_norm(store, prefix + ".norm1", dim);
  if (variant == AttentionVariant::depth_spatial) {
    // Only the last projection of the residual branch starts at zero; a zero DA-MSA2 output
    // would leave both attentions without gradient.
    p.depth_attention = make_attention_params(store, prefix + ".depth_attention", dim, heads, 2 * window[2] - 1, false);
    p.norm_depth = make_layer_norm(store, prefix + ".norm_depth", dim);
  }
  p.spatial_attention =
      make_attention_params(store, prefix + ".spatial_attention", dim, heads, bias_table_rows(window), true);
  p.norm2 = make_layer_norm(store, prefix + ".norm2", dim);
  p.fc1 = make_linear(store, prefix + ".fc1", dim, dim * mlp_ratio);
  p.fc2 = make_linear(store, prefix + ".fc2", dim * mlp_ratio, dim, Init::zeros);
  return p;
}

template <typename T>
RdactParams<T> make_rdact_params(ParamStore<T>& store, const std::string& prefix, const RdactConfig& config,
                                 std::size_t groups) {
  if (config.layers == 0) throw std::invalid_argument("rdact: L must be >= 1");
  if (config.window[0] == 0 || config.window[1] == 0 || config.window[2] == 0) {
    throw std::invalid_argument("rdact: window extents must be >= 1");
  }
  RdactParams<T> p;
  p.embed.patch = config.patch;
  p.embed.proj = make_linear(store, prefix + ".embed.proj", config.patch[0] * config.patch[1] * groups,
                             config.embed_dim);
  p.embed.norm = make_layer_norm(store, prefix + ".embed.norm", config.embed_dim);
  p.window = WindowSpec{config.window, false};
  for (std::size_t k = 0; k < config.layers; ++k) {
    const std::string base = prefix + ".layer" + std::to_string(k);
    p.layers.emplace_back(make_datl_params(store, base + ".datl", config.embed_dim, config.heads, config.mlp_ratio,
                                           config.window, config.variant),
                          make_datl_params(store, base + ".dastl", config.embed_dim, config.heads, config.mlp_ratio,
                                           config.window, config.variant));
  }
  p.rec = make_linear(store, prefix + ".rec", config.embed_dim, groups, Init::zeros);
  return p;
}

#define COSTFORMER_INSTANTIATE_RDACT(T)                                                                            \
  template Var<T> patch_embed(const Var<T>&, const PatchEmbedParams<T>&);                                          \
  template Var<T> re_embed(const Var<T>&, const LinearParams<T>&, const Extents3&, const std::array<std::size_t, 2>&); \
  template Var<T> da_sa1(const Var<T>&, const AttentionParams<T>&, const WindowPartition&);                       \
  template Var<T> da_sa2(const Var<T>&, const AttentionParams<T>&, const WindowPartition&);                       \
  template Var<T> transformer_layer(const Var<T>&, const DatlParams<T>&, const WindowSpec&);                       \
  template Var<T> datl_forward(const Var<T>&, const DatlParams<T>&, const Extents3&);                              \
  template Var<T> dastl_forward(const Var<T>&, const DatlParams<T>&, const Extents3&);                             \
  template CostVolume<T> rdact_forward(const CostVolume<T>&, const RdactParams<T>&);                               \
  template AttentionParams<T> make_attention_params(ParamStore<T>&, const std::string&, std::size_t, std::size_t,  \
                                                    std::size_t, bool);                                            \
  template DatlParams<T> make_datl_params(ParamStore<T>&, const std::string&, std::size_t, std::size_t,            \
                                          std::size_t, const Extents3&, AttentionVariant);                         \
  template RdactParams<T> make_rdact_params(ParamStore<T>&, const std::string&, const RdactConfig&, std::size_t);

COSTFORMER_INSTANTIATE_RDACT(float)
COSTFORMER_INSTANTIATE_RDACT(double)

}  // namespace costformer
