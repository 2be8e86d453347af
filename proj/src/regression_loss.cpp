#include "costformer/regression_loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace costformer {

template <typename T>
Var<T> soft_argmin(const AggregatedCost<T>& c, const DepthHypotheses<T>& hyps) {
  const Shape& s = c.cost.shape();
  if (s.size() != 3) throw std::invalid_argument("soft_argmin: cost must be [H x W x D]");
  hyps.validate();
  if (hyps.count() != s[2]) throw std::invalid_argument("soft_argmin: hypothesis count does not match cost depth");
  const std::size_t H = s[0], W = s[1], D = s[2];
  const Tensor<T> depth_values = expand_hypotheses(hyps, H, W);
  Tensor<T> prob({H, W, D});
  Tensor<T> out({H, W});
  const auto& cost = c.cost.value();
  for (std::size_t p = 0; p < H * W; ++p) {
    const T* row = &cost[p * D];
    const T peak = *std::max_element(row, row + D);
    T z = 0;
    for (std::size_t j = 0; j < D; ++j) {
      prob[p * D + j] = std::exp(row[j] - peak);
      z += prob[p * D + j];
    }
    T depth = 0;
    for (std::size_t j = 0; j < D; ++j) {
      prob[p * D + j] /= z;
      depth += prob[p * D + j] * depth_values[p * D + j];
    }
    out[p] = depth;
  }
  return Var<T>::make_result(std::move(out), {&c.cost}, [prob, depth_values, D](Node<T>& self) {
    Tensor<T>& g = self.input(0).grad_buffer();
    const std::size_t pixels = self.value.numel();
    for (std::size_t p = 0; p < pixels; ++p) {
      const T up = self.grad[p];
      const T mean = self.value[p];
      for (std::size_t j = 0; j < D; ++j) {
        g[p * D + j] += up * prob[p * D + j] * (depth_values[p * D + j] - mean);
      }
    }
  });
}

double smooth_l1(double x, double beta) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * a * a / beta : a - 0.5 * beta;
}

template <typename T>
Var<T> stage_loss(const Var<T>& pred, const Tensor<T>& gt, const std::vector<std::uint8_t>& valid) {
  if (pred.shape() != gt.shape()) throw std::invalid_argument("stage_loss: prediction and ground truth differ in shape");
  const std::size_t n = gt.numel();
  if (!valid.empty() && valid.size() != n) throw std::invalid_argument("stage_loss: mask size mismatch");
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid.empty() && !valid[i]) continue;
    ++count;
    total += smooth_l1(static_cast<double>(pred.value()[i]) - static_cast<double>(gt[i]));
  }
  if (count == 0) return Var<T>(Tensor<T>({1}, T(0)));
  const double inv = 1.0 / static_cast<double>(count);
  return Var<T>::make_result(Tensor<T>({1}, static_cast<T>(total * inv)), {&pred},
                             [gt, valid, inv](Node<T>& self) {
                               Tensor<T>& g = self.input(0).grad_buffer();
                               const auto& x = self.input(0).value;
                               const double up = static_cast<double>(self.grad[0]) * inv;
                               for (std::size_t i = 0; i < g.numel(); ++i) {
                                 if (!valid.empty() && !valid[i]) continue;
                                 const double r = static_cast<double>(x[i]) - static_cast<double>(gt[i]);
                                 const double d = std::abs(r) < kSmoothL1Beta ? r / kSmoothL1Beta
                                                                              : (r > 0 ? 1.0 : -1.0);
                                 g[i] += static_cast<T>(up * d);
                               }
                             });
}

double total_loss(const LossTerms& terms) {
  double total = 0.0;
  for (const auto& stage : terms.per_stage_per_iter) {
    for (double v : stage) total += v;
  }
  return total + terms.l_ref;
}

template <typename T>
Var<T> sum_terms(const std::vector<Var<T>>& terms) {
  if (terms.empty()) return Var<T>(Tensor<T>({1}, T(0)));
  Var<T> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

#define COSTFORMER_INSTANTIATE_LOSS(T)                                                       \
  template Var<T> soft_argmin(const AggregatedCost<T>&, const DepthHypotheses<T>&);          \
  template Var<T> stage_loss(const Var<T>&, const Tensor<T>&, const std::vector<std::uint8_t>&); \
  template Var<T> sum_terms(const std::vector<Var<T>>&);

COSTFORMER_INSTANTIATE_LOSS(float)
COSTFORMER_INSTANTIATE_LOSS(double)

}  // namespace costformer
