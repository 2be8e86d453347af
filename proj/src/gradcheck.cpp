#include "costformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "costformer/ops.hpp"

namespace costformer {

namespace {

Tensor<double> projection_weights(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor<double> w(shape);
  for (double& v : w.data()) v = dist(rng);
  return w;
}

double checked(double v) {
  if (!std::isfinite(v)) throw std::runtime_error("finite_diff_grad: non-finite function value");
  return v;
}

}  // namespace

Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                                double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  Tensor<double> probe = x;
  Tensor<double> grad(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + eps;
    const double up = checked(f(probe));
    probe[i] = x[i] - eps;
    const double down = checked(f(probe));
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

GradCheckReport compare_gradients(const Tensor<double>& analytic, const Tensor<double>& numeric) {
  if (analytic.shape() != numeric.shape()) throw std::invalid_argument("compare_gradients: shape mismatch");
  GradCheckReport report;
  report.num_elements = analytic.numel();
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  const double floor = std::max(1e-2 * scale, 1e-12);
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]);
    report.max_abs_error = std::max(report.max_abs_error, err);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    report.max_rel_error = std::max(report.max_rel_error, err / denom);
  }
  return report;
}

GradCheckReport check_input_gradient(const std::function<Var<double>(const Var<double>&)>& fn,
                                     const Tensor<double>& x, double eps, std::uint64_t seed) {
  Var<double> input(x, true);
  Var<double> out = fn(input);
  const Tensor<double> weights = projection_weights(out.shape(), seed);
  weighted_sum(out, weights).backward();
  const Tensor<double> analytic = input.grad().empty() ? Tensor<double>(x.shape()) : input.grad();

  NoGradGuard guard;
  const Tensor<double> numeric = finite_diff_grad(
      [&](const Tensor<double>& probe) { return weighted_sum(fn(Var<double>(probe)), weights).value()[0]; }, x,
      eps);
  return compare_gradients(analytic, numeric);
}

GradCheckReport check_param_gradient(const std::function<Var<double>()>& fn, Var<double>& param, double eps,
                                     std::uint64_t seed, const std::vector<std::size_t>& indices) {
  param.zero_grad();
  Var<double> out = fn();
  const Tensor<double> weights = projection_weights(out.shape(), seed);
  weighted_sum(out, weights).backward();
  const Tensor<double> full = param.grad().empty() ? Tensor<double>(param.shape()) : param.grad();

  std::vector<std::size_t> picked = indices;
  if (picked.empty()) {
    picked.resize(param.numel());
    for (std::size_t i = 0; i < picked.size(); ++i) picked[i] = i;
  }
  NoGradGuard guard;
  Tensor<double> analytic({picked.size()});
  Tensor<double> numeric({picked.size()});
  Tensor<double>& value = param.mutable_value();
  auto eval = [&] { return checked(weighted_sum(fn(), weights).value()[0]); };
  for (std::size_t n = 0; n < picked.size(); ++n) {
    const std::size_t i = picked[n];
    const double original = value[i];
    value[i] = original + eps;
    const double up = eval();
    value[i] = original - eps;
    const double down = eval();
    value[i] = original;
    numeric[n] = (up - down) / (2.0 * eps);
    analytic[n] = full[i];
  }
  param.zero_grad();
  return compare_gradients(analytic, numeric);
}

}  // namespace costformer
