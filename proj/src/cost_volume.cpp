#include "costformer/cost_volume.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace costformer {

namespace {

constexpr double kFuseDenominatorFloor = 1e-8;

}  // namespace

template <typename T>
CostVolume<T> groupwise_correlation(const Var<T>& reference, const Var<T>& warped,
                                    const std::vector<std::uint8_t>& mask, std::size_t groups) {
  const Tensor<T>& f0 = reference.value();
  const Tensor<T>& fw = warped.value();
  if (f0.rank() != 3 || fw.rank() != 4) throw std::invalid_argument("groupwise_correlation: bad ranks");
  const std::size_t height = f0.dim(0), width = f0.dim(1), channels = f0.dim(2);
  const std::size_t depth = fw.dim(2);
  if (fw.dim(0) != height || fw.dim(1) != width || fw.dim(3) != channels) {
    throw std::invalid_argument("groupwise_correlation: feature extents mismatch");
  }
  if (groups == 0 || channels % groups != 0) {
    throw std::invalid_argument("groupwise_correlation: G=" + std::to_string(groups) + " does not divide C=" +
                                std::to_string(channels));
  }
  if (!mask.empty() && mask.size() != height * width * depth) {
    throw std::invalid_argument("groupwise_correlation: mask size mismatch");
  }
  const std::size_t per_group = channels / groups;
  const T factor = static_cast<T>(groups) / static_cast<T>(channels);
  auto keep = std::make_shared<std::vector<std::uint8_t>>(mask);

  Tensor<T> out({height, width, depth, groups});
  for (std::size_t p = 0; p < height * width; ++p) {
    const T* a = f0.data().data() + p * channels;
    for (std::size_t j = 0; j < depth; ++j) {
      const std::size_t s = p * depth + j;
      if (!keep->empty() && !(*keep)[s]) continue;
      const T* b = fw.data().data() + s * channels;
      T* o = out.data().data() + s * groups;
      for (std::size_t g = 0; g < groups; ++g) {
        T acc = 0;
        for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c) acc += a[c] * b[c];
        o[g] = factor * acc;
      }
    }
  }
  Var<T> cost = Var<T>::make_result(
      std::move(out), {&reference, &warped}, [keep, depth, groups, channels, per_group, factor](Node<T>& self) {
        const Tensor<T>& f0 = self.input(0).value;
        const Tensor<T>& fw = self.input(1).value;
        T* g0 = self.input_needs_grad(0) ? self.input(0).grad_buffer().data().data() : nullptr;
        T* gw = self.input_needs_grad(1) ? self.input(1).grad_buffer().data().data() : nullptr;
        const std::size_t pixels = f0.numel() / channels;
        for (std::size_t p = 0; p < pixels; ++p) {
          for (std::size_t j = 0; j < depth; ++j) {
            const std::size_t s = p * depth + j;
            if (!keep->empty() && !(*keep)[s]) continue;
            const T* up = self.grad.data().data() + s * groups;
            for (std::size_t g = 0; g < groups; ++g) {
              const T u = factor * up[g];
              for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c) {
                if (g0) g0[p * channels + c] += u * fw[s * channels + c];
                if (gw) gw[s * channels + c] += u * f0[p * channels + c];
              }
            }
          }
        }
      });
  return {std::move(cost), groups, channels};
}

template <typename T>
CostVolume<T> fuse_views(const std::vector<CostVolume<T>>& per_view, const Var<T>& view_weights) {
  if (per_view.empty()) throw std::invalid_argument("fuse_views: empty view list");
  const Shape& shape = per_view.front().cost.shape();
  const std::size_t views = per_view.size();
  const std::size_t pixels = shape[0] * shape[1];
  const std::size_t inner = shape[2] * shape[3];
  if (view_weights.shape() != Shape{views, shape[0], shape[1]}) {
    throw std::invalid_argument("fuse_views: weights must be [N x H x W]");
  }
  for (const auto& v : per_view) {
    if (v.cost.shape() != shape) throw std::invalid_argument("fuse_views: volume shape mismatch");
  }
  const Tensor<T>& w = view_weights.value();
  for (T v : w.data()) {
    if (v < T(0)) throw std::invalid_argument("fuse_views: weights must be non-negative");
  }

  auto denom = std::make_shared<std::vector<T>>(pixels);
  Tensor<T> out(shape);
  for (std::size_t p = 0; p < pixels; ++p) {
    T total = 0;
    for (std::size_t i = 0; i < views; ++i) total += w[i * pixels + p];
    (*denom)[p] = std::max(total, static_cast<T>(kFuseDenominatorFloor));
  }
  for (std::size_t i = 0; i < views; ++i) {
    const Tensor<T>& s = per_view[i].cost.value();
    for (std::size_t p = 0; p < pixels; ++p) {
      const T wi = w[i * pixels + p];
      for (std::size_t k = 0; k < inner; ++k) out[p * inner + k] += wi * s[p * inner + k];
    }
  }
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t k = 0; k < inner; ++k) out[p * inner + k] /= (*denom)[p];
  }

  std::vector<Var<T>> inputs;
  for (const auto& v : per_view) inputs.push_back(v.cost);
  inputs.push_back(view_weights);
  Var<T> fused = Var<T>::make_result(std::move(out), inputs, [views, pixels, inner, denom](Node<T>& self) {
    const Tensor<T>& w = self.input(views).value;
    for (std::size_t i = 0; i < views; ++i) {
      if (!self.input_needs_grad(i)) continue;
      Tensor<T>& g = self.input(i).grad_buffer();
      for (std::size_t p = 0; p < pixels; ++p) {
        const T scale = w[i * pixels + p] / (*denom)[p];
        for (std::size_t k = 0; k < inner; ++k) g[p * inner + k] += scale * self.grad[p * inner + k];
      }
    }
    if (!self.input_needs_grad(views)) return;
    Tensor<T>& gw = self.input(views).grad_buffer();
    for (std::size_t p = 0; p < pixels; ++p) {
      T total = 0;
      for (std::size_t i = 0; i < views; ++i) total += w[i * pixels + p];
      const bool clamped = !(total > static_cast<T>(kFuseDenominatorFloor));
      for (std::size_t i = 0; i < views; ++i) {
        const Tensor<T>& s = self.input(i).value;
        T acc = 0;
        for (std::size_t k = 0; k < inner; ++k) {
          const std::size_t idx = p * inner + k;
          const T sub = clamped ? T(0) : self.value[idx];
          acc += self.grad[idx] * (s[idx] - sub);
        }
        gw[i * pixels + p] += acc / (*denom)[p];
      }
    }
  });
  return {std::move(fused), per_view.front().groups, per_view.front().channels};
}

template <typename T>
Tensor<T> view_weights_from_costs(const std::vector<CostVolume<T>>& per_view) {
  if (per_view.empty()) throw std::invalid_argument("view_weights_from_costs: empty view list");
  const Shape& shape = per_view.front().cost.shape();
  const std::size_t views = per_view.size();
  const std::size_t pixels = shape[0] * shape[1];
  const std::size_t inner = shape[2] * shape[3];
  Tensor<T> weights({views, shape[0], shape[1]});
  for (std::size_t p = 0; p < pixels; ++p) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < views; ++i) {
      const Tensor<T>& s = per_view[i].cost.value();
      T mean = 0;
      for (std::size_t k = 0; k < inner; ++k) mean += s[p * inner + k];
      mean /= static_cast<T>(inner);
      weights[i * pixels + p] = mean;
      mx = std::max(mx, mean);
    }
    T total = 0;
    for (std::size_t i = 0; i < views; ++i) {
      T& v = weights[i * pixels + p];
      v = std::exp(v - mx);
      total += v;
    }
    for (std::size_t i = 0; i < views; ++i) weights[i * pixels + p] /= total;
  }
  return weights;
}

template <typename T>
AggregatedCost<T> reduce_groups(const CostVolume<T>& cv, const std::vector<LinearParams<T>>& proj) {
  if (proj.empty()) throw std::invalid_argument("reduce_groups: empty projection stack");
  const Shape& shape = cv.cost.shape();
  if (proj.front().in_dim() != shape[3]) throw std::invalid_argument("reduce_groups: input dim must equal G");
  if (proj.back().out_dim() != 1) throw std::invalid_argument("reduce_groups: final output dim must be 1");
  Var<T> x = cv.cost;
  for (std::size_t i = 0; i < proj.size(); ++i) {
    if (i > 0) x = gelu(x);
    x = linear(x, proj[i]);
  }
  return {reshape(x, {shape[0], shape[1], shape[2]})};
}

std::vector<std::array<double, 2>> grid_offsets(std::size_t side, double dilation) {
  if (side == 0) throw std::invalid_argument("grid_offsets: side must be >= 1");
  std::vector<std::array<double, 2>> out;
  const double half = 0.5 * static_cast<double>(side - 1);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      out.push_back({(static_cast<double>(c) - half) * dilation, (static_cast<double>(r) - half) * dilation});
    }
  }
  return out;
}

template <typename T>
Var<T> weighted_window_average(const Var<T>& samples, const Var<T>& weights, const Var<T>& depth_weights,
                               const std::vector<std::uint8_t>& valid, const Var<T>& center) {
  const std::size_t pixels = center.shape()[0];
  const std::size_t depth = center.shape()[1];
  const std::size_t kernel = weights.shape()[1];
  if (samples.shape() != Shape{pixels * kernel, depth} || depth_weights.shape() != samples.shape() ||
      weights.shape() != Shape{pixels, kernel} || valid.size() != pixels * kernel) {
    throw std::invalid_argument("weighted_window_average: shape mismatch");
  }
  const Tensor<T>& s = samples.value();
  const Tensor<T>& w = weights.value();
  const Tensor<T>& dw = depth_weights.value();
  auto keep = std::make_shared<std::vector<std::uint8_t>>(valid);
  auto denom = std::make_shared<std::vector<T>>(pixels * depth, T(0));
  Tensor<T> out({pixels, depth});
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t j = 0; j < depth; ++j) {
      T num = 0, den = 0;
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::size_t sk = p * kernel + k;
        if (!valid[sk]) continue;
        const T a = w[sk] * dw[sk * depth + j];
        num += a * s[sk * depth + j];
        den += a;
      }
      (*denom)[p * depth + j] = den;
      out[p * depth + j] = den > T(0) ? num / den : center.value()[p * depth + j];
    }
  }
  return Var<T>::make_result(
      std::move(out), {&samples, &weights, &depth_weights, &center},
      [keep, denom, pixels, depth, kernel](Node<T>& self) {
        const Tensor<T>& s = self.input(0).value;
        const Tensor<T>& w = self.input(1).value;
        const Tensor<T>& dw = self.input(2).value;
        T* gs = self.input_needs_grad(0) ? self.input(0).grad_buffer().data().data() : nullptr;
        T* gwt = self.input_needs_grad(1) ? self.input(1).grad_buffer().data().data() : nullptr;
        T* gd = self.input_needs_grad(2) ? self.input(2).grad_buffer().data().data() : nullptr;
        T* gc = self.input_needs_grad(3) ? self.input(3).grad_buffer().data().data() : nullptr;
        for (std::size_t p = 0; p < pixels; ++p) {
          for (std::size_t j = 0; j < depth; ++j) {
            const std::size_t pj = p * depth + j;
            const T up = self.grad[pj];
            const T den = (*denom)[pj];
            if (!(den > T(0))) {
              if (gc) gc[pj] += up;
              continue;
            }
            const T outv = self.value[pj];
            for (std::size_t k = 0; k < kernel; ++k) {
              const std::size_t sk = p * kernel + k;
              if (!(*keep)[sk]) continue;
              const std::size_t skj = sk * depth + j;
              const T a = w[sk] * dw[skj];
              if (gs) gs[skj] += up * a / den;
              const T ga = up * (s[skj] - outv) / den;
              if (gwt) gwt[sk] += ga * dw[skj];
              if (gd) gd[skj] += ga * w[sk];
            }
          }
        }
      });
}

template <typename T>
AggregatedCost<T> adaptive_spatial_aggregate(const AggregatedCost<T>& c, const SpatialWindowParams<T>& params,
                                             const Var<T>& reference, const DepthHypotheses<T>& hyps) {
  const Shape& cs = c.cost.shape();
  if (cs.size() != 3) throw std::invalid_argument("adaptive_spatial_aggregate: cost must be [H x W x D]");
  const std::size_t height = cs[0], width = cs[1], depth = cs[2];
  const Shape& fs = reference.shape();
  if (fs.size() != 3 || fs[0] != height || fs[1] != width) {
    throw std::invalid_argument("adaptive_spatial_aggregate: reference features extent mismatch");
  }
  const std::size_t channels = fs[2];
  const std::size_t kernel = params.kernel_size();
  if (kernel == 0) throw std::invalid_argument("adaptive_spatial_aggregate: K_e must be >= 1");
  if (hyps.count() != depth) throw std::invalid_argument("adaptive_spatial_aggregate: hypothesis count mismatch");
  const std::size_t pixels = height * width;

  Tensor<T> base({pixels * kernel, 2});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::size_t i = (y * width + x) * kernel + k;
        base[2 * i] = static_cast<T>(static_cast<double>(x) + params.base_offsets[k][0]);
        base[2 * i + 1] = static_cast<T>(static_cast<double>(y) + params.base_offsets[k][1]);
      }
    }
  }
  Var<T> offsets = reshape(linear(reshape(reference, {pixels, channels}), params.offset_proj), {pixels * kernel, 2});
  Var<T> coords = add_constant(offsets, base);

  // Feature similarity weights w_k.
  BilinearSample<T> feat = bilinear_sample(reference, coords);
  CostVolume<T> corr =
      groupwise_correlation(reference, reshape(feat.values, {height, width, kernel, channels}), feat.valid,
                            params.groups);
  Var<T> logits = corr.cost;
  for (std::size_t i = 0; i < params.weight_net.size(); ++i) {
    if (i > 0) logits = gelu(logits);
    logits = linear(logits, params.weight_net[i]);
  }
  if (logits.shape().back() != 1) throw std::invalid_argument("adaptive_spatial_aggregate: weight net must output 1");
  Var<T> weights = reshape(sigmoid(logits), {pixels, kernel});

  // Inverse-depth similarity d_k.
  Tensor<T> inverse = expand_hypotheses(hyps, height, width);
  for (T& v : inverse.data()) v = T(1) / v;
  Var<T> inverse_map(inverse);
  BilinearSample<T> sampled_inverse = bilinear_sample(inverse_map, coords);
  auto repeat = std::make_shared<std::vector<std::int64_t>>(pixels * kernel);
  for (std::size_t i = 0; i < pixels * kernel; ++i) (*repeat)[i] = static_cast<std::int64_t>(i / kernel);
  Var<T> center_inverse = gather_rows(reshape(inverse_map, {pixels, depth}), repeat, {pixels * kernel, depth});
  Var<T> depth_weights = sigmoid(
      scale(abs_value(sub(sampled_inverse.values, center_inverse)), static_cast<T>(-1.0 / params.depth_temperature)));

  BilinearSample<T> cost_samples = bilinear_sample(c.cost, coords);
  Var<T> out = weighted_window_average(cost_samples.values, weights, depth_weights, cost_samples.valid,
                                       reshape(c.cost, {pixels, depth}));
  return {reshape(out, {height, width, depth})};
}

#define COSTFORMER_INSTANTIATE_COST_VOLUME(T)                                                                    \
  template CostVolume<T> groupwise_correlation(const Var<T>&, const Var<T>&, const std::vector<std::uint8_t>&,   \
                                               std::size_t);                                                     \
  template CostVolume<T> fuse_views(const std::vector<CostVolume<T>>&, const Var<T>&);                           \
  template Tensor<T> view_weights_from_costs(const std::vector<CostVolume<T>>&);                                 \
  template AggregatedCost<T> reduce_groups(const CostVolume<T>&, const std::vector<LinearParams<T>>&);           \
  template Var<T> weighted_window_average(const Var<T>&, const Var<T>&, const Var<T>&,                           \
                                          const std::vector<std::uint8_t>&, const Var<T>&);                      \
  template AggregatedCost<T> adaptive_spatial_aggregate(const AggregatedCost<T>&, const SpatialWindowParams<T>&, \
                                                        const Var<T>&, const DepthHypotheses<T>&);

COSTFORMER_INSTANTIATE_COST_VOLUME(float)
COSTFORMER_INSTANTIATE_COST_VOLUME(double)

}  // namespace costformer
