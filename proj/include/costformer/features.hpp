#pragma once

#include <string>
#include <vector>

#include "costformer/params.hpp"

namespace costformer {

template <typename T>
struct ConvParams {
  LinearParams<T> proj;  // (k * k * C_in) -> C_out
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

// Three-level pyramid; level 0 is full resolution (stage 1), level 2 is 1/4 (stage 3).
template <typename T>
struct FeatureParams {
  std::vector<std::vector<ConvParams<T>>> levels;
  std::vector<LinearParams<T>> heads;  // per level 1x1 output projection
};

struct FeatureConfig {
  std::vector<std::size_t> channels{8, 16, 32};  // C at stages 1, 2, 3
  std::size_t input_channels = 3;
};

// Convolution with edge-replicating padding; output pixel (i, j) is centered on input (i*s, j*s).
template <typename T>
Var<T> conv2d(const Var<T>& image, const ConvParams<T>& params);

template <typename T>
FeatureParams<T> make_feature_params(ParamStore<T>& store, const std::string& prefix, const FeatureConfig& config);

// Returns features per level, finest first: [H x W x C_1], [H/2 x W/2 x C_2], ...
template <typename T>
std::vector<Var<T>> extract_features(const Var<T>& image, const FeatureParams<T>& params);

}  // namespace costformer
