#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "costformer/autograd.hpp"
#include "costformer/tensor.hpp"

namespace costformer {

// Weight is [in_dim x out_dim]; bias [out_dim] may be undefined.
template <typename T>
struct LinearParams {
  Var<T> weight;
  Var<T> bias;

  std::size_t in_dim() const { return weight.shape().at(0); }
  std::size_t out_dim() const { return weight.shape().at(1); }
  bool has_bias() const { return bias.defined(); }
};

template <typename T>
struct LayerNormParams {
  Var<T> gamma;
  Var<T> beta;
};

inline constexpr double kLayerNormEps = 1e-5;

// Row selection table. Entry -1 yields a zero row.
using RowIndex = std::shared_ptr<const std::vector<std::int64_t>>;

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_constant(const Var<T>& a, const Tensor<T>& c);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> gelu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> abs_value(const Var<T>& a);
template <typename T> Var<T> reciprocal(const Var<T>& a);

template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

// Treats `a` as rows of its last extent; output row i is input row rows[i] (or zeros).
template <typename T> Var<T> gather_rows(const Var<T>& a, const RowIndex& rows, Shape out_shape);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> weighted_sum(const Var<T>& a, const Tensor<T>& weights);

template <typename T> Var<T> linear(const Var<T>& x, const LinearParams<T>& p);
template <typename T> Var<T> mlp_gelu(const Var<T>& x, const LinearParams<T>& fc1, const LinearParams<T>& fc2);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t axis);
template <typename T> Var<T> layer_norm(const Var<T>& x, const LayerNormParams<T>& p);

template <typename T> Var<T> softmax(const Var<T>& x, std::size_t axis);

template <typename T>
struct BilinearSample {
  Var<T> values;                     // [N x C]
  std::vector<std::uint8_t> valid;   // per sample
};

// Positions this far outside the map still count as on its border.
inline constexpr double kSampleBorderTolerance = 1e-6;

// map [H x W x C], coords [N x 2] as continuous (x, y). Samples outside
// [0, W-1] x [0, H-1] (up to kSampleBorderTolerance) are zero with valid = 0.
template <typename T> BilinearSample<T> bilinear_sample(const Var<T>& map, const Var<T>& coords);

double gelu_value(double x);
double gelu_derivative(double x);

}  // namespace costformer
