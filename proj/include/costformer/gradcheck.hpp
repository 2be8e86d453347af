#pragma once

#include <cstdint>
#include <functional>

#include "costformer/autograd.hpp"
#include "costformer/tensor.hpp"

namespace costformer {

struct GradCheckReport {
  double max_abs_error = 0.0;
  // |analytic - numeric| / max(|analytic|, |numeric|, 1% of the largest gradient magnitude)
  double max_rel_error = 0.0;
  std::size_t num_elements = 0;

  bool passes(double rel_tol) const { return max_rel_error <= rel_tol; }
};

// Central differences, evaluated in double precision. Throws on a non-finite f.
Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                                double eps);

GradCheckReport compare_gradients(const Tensor<double>& analytic, const Tensor<double>& numeric);

// Checks d/dx of a fixed random projection of fn(x).
GradCheckReport check_input_gradient(const std::function<Var<double>(const Var<double>&)>& fn,
                                     const Tensor<double>& x, double eps = 1e-3, std::uint64_t seed = 17);

// Checks d/dparam of a fixed random projection of fn(); the parameter is perturbed in place.
// `indices` restricts the check to a subset of elements (all when empty).
GradCheckReport check_param_gradient(const std::function<Var<double>()>& fn, Var<double>& param,
                                     double eps = 1e-3, std::uint64_t seed = 17,
                                     const std::vector<std::size_t>& indices = {});

}  // namespace costformer
