#include "costformer/rrt.hpp"

#include <stdexcept>

namespace costformer {

template <typename T>
Var<T> rrt_embed(const AggregatedCost<T>& c, const PatchEmbedParams<T>& embed) {
  const Shape& s = c.cost.shape();
  if (s.size() != 3) throw std::invalid_argument("rrt_embed: cost must be [H x W x D]");
  if (embed.proj.in_dim() != embed.patch[0] * embed.patch[1] * s[2]) {
    throw std::invalid_argument("rrt_embed: projection input must be p*p*D");
  }
  Var<T> tokens = patch_embed(reshape(c.cost, {s[0], s[1], 1, s[2]}), embed);
  const Shape& t = tokens.shape();
  return reshape(tokens, {t[0], t[1], t[3]});
}

template <typename T>
AggregatedCost<T> rrt_forward(const AggregatedCost<T>& c0, const RrtParams<T>& params) {
  const Shape& s = c0.cost.shape();
  if (s.size() != 3) throw std::invalid_argument("rrt_forward: cost must be [H x W x D]");
  if (params.rer.out_dim() != s[2]) throw std::invalid_argument("rrt_forward: RER must output D channels");
  Var<T> x = rrt_embed(c0, params.embed);
  const Shape& t = x.shape();
  x = reshape(x, {t[0], t[1], 1, t[2]});
  for (const auto& [rt, rst] : params.layers) {
    x = datl_forward(x, rt, params.window.extents);
    x = dastl_forward(x, rst, params.window.extents);
  }
  Var<T> restored = re_embed(x, params.rer, {s[0], s[1], 1}, params.embed.patch);
  return {add(reshape(restored, s), c0.cost)};
}

template <typename T>
RrtParams<T> make_rrt_params(ParamStore<T>& store, const std::string& prefix, const RrtConfig& config,
                             std::size_t depth) {
  if (config.patch == 0 || config.window == 0) throw std::invalid_argument("rrt: patch and window must be >= 1");
  RrtParams<T> p;
  p.embed.patch = {config.patch, config.patch};
  p.embed.proj = make_linear(store, prefix + ".embed.proj", config.patch * config.patch * depth, config.embed_dim);
  p.window = WindowSpec{{config.window, config.window, 1}, false};
  for (std::size_t k = 0; k < config.layers; ++k) {
    const std::string base = prefix + ".layer" + std::to_string(k);
    p.layers.emplace_back(make_datl_params(store, base + ".rt", config.embed_dim, config.heads, config.mlp_ratio,
                                           p.window.extents, AttentionVariant::spatial_only),
                          make_datl_params(store, base + ".rst", config.embed_dim, config.heads, config.mlp_ratio,
                                           p.window.extents, AttentionVariant::spatial_only));
  }
  p.rer = make_linear(store, prefix + ".rer", config.embed_dim, depth, Init::zeros);
  return p;
}

#define COSTFORMER_INSTANTIATE_RRT(T)                                                         \
  template Var<T> rrt_embed(const AggregatedCost<T>&, const PatchEmbedParams<T>&);            \
  template AggregatedCost<T> rrt_forward(const AggregatedCost<T>&, const RrtParams<T>&);      \
  template RrtParams<T> make_rrt_params(ParamStore<T>&, const std::string&, const RrtConfig&, \
                                        std::size_t);

COSTFORMER_INSTANTIATE_RRT(float)
COSTFORMER_INSTANTIATE_RRT(double)

}  // namespace costformer
