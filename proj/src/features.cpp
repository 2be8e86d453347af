#include "costformer/features.hpp"

#include <algorithm>
#include <stdexcept>

namespace costformer {

template <typename T>
Var<T> conv2d(const Var<T>& image, const ConvParams<T>& params) {
  const Shape& s = image.shape();
  if (s.size() != 3) throw std::invalid_argument("conv2d: image must be [H x W x C]");
  const std::size_t k = params.kernel, stride = params.stride;
  if (k == 0 || k % 2 == 0 || stride == 0) throw std::invalid_argument("conv2d: kernel must be odd, stride >= 1");
  const std::size_t H = s[0], W = s[1], C = s[2];
  if (params.proj.in_dim() != k * k * C) throw std::invalid_argument("conv2d: projection input must be k*k*C");
  const std::size_t Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
  const auto r = static_cast<std::int64_t>(k / 2);
  auto rows = std::make_shared<std::vector<std::int64_t>>(Ho * Wo * k * k);
  std::size_t n = 0;
  for (std::size_t i = 0; i < Ho; ++i) {
    for (std::size_t j = 0; j < Wo; ++j) {
      for (std::int64_t dy = -r; dy <= r; ++dy) {
        for (std::int64_t dx = -r; dx <= r; ++dx) {
          const auto y = std::clamp<std::int64_t>(static_cast<std::int64_t>(i * stride) + dy, 0, H - 1);
          const auto x = std::clamp<std::int64_t>(static_cast<std::int64_t>(j * stride) + dx, 0, W - 1);
          (*rows)[n++] = y * static_cast<std::int64_t>(W) + x;
        }
      }
    }
  }
  return linear(gather_rows(image, rows, {Ho, Wo, k * k * C}), params.proj);
}

template <typename T>
FeatureParams<T> make_feature_params(ParamStore<T>& store, const std::string& prefix, const FeatureConfig& config) {
  if (config.channels.empty()) throw std::invalid_argument("features: at least one level required");
  FeatureParams<T> p;
  std::size_t in = config.input_channels;
  for (std::size_t l = 0; l < config.channels.size(); ++l) {
    const std::size_t c = config.channels[l];
    const std::string base = prefix + ".level" + std::to_string(l);
    std::vector<ConvParams<T>> convs;
    convs.push_back({make_linear(store, base + ".conv0", 9 * in, c, Init::he_uniform), 3, l == 0 ? 1u : 2u});
    convs.push_back({make_linear(store, base + ".conv1", 9 * c, c, Init::he_uniform), 3, 1});
    p.levels.push_back(std::move(convs));
    p.heads.push_back(make_linear(store, base + ".head", c, c));
    in = c;
  }
  return p;
}

template <typename T>
std::vector<Var<T>> extract_features(const Var<T>& image, const FeatureParams<T>& params) {
  std::vector<Var<T>> out;
  Var<T> x = image;
  for (std::size_t l = 0; l < params.levels.size(); ++l) {
    for (const auto& conv : params.levels[l]) x = gelu(conv2d(x, conv));
    out.push_back(linear(x, params.heads[l]));
  }
  return out;
}

#define COSTFORMER_INSTANTIATE_FEATURES(T)                                                                  \
  template Var<T> conv2d(const Var<T>&, const ConvParams<T>&);                                              \
  template FeatureParams<T> make_feature_params(ParamStore<T>&, const std::string&, const FeatureConfig&); \
  template std::vector<Var<T>> extract_features(const Var<T>&, const FeatureParams<T>&);

COSTFORMER_INSTANTIATE_FEATURES(float)
COSTFORMER_INSTANTIATE_FEATURES(double)

}  // namespace costformer
