#include <random>

#include "costformer/pipeline.hpp"

namespace costformer {

GradCheckReport check_model_gradient(const ModelConfig& config, const SyntheticScene& scene,
                                     const ModelGradCheckConfig& check) {
  Model<double> model = make_model<double>(config);
  std::mt19937_64 rng(check.seed);
  std::normal_distribution<double> noise(0.0, check.jitter);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& [name, var] : model.store.entries()) {
    for (double& v : var.mutable_value().data()) v += noise(rng);
  }

  ForwardTrace<double> trace;
  ModelOutput<double> out = run_model(model, scene, &trace);
  out.loss.backward();

  std::vector<std::pair<std::size_t, std::size_t>> picked;  // (entry, element)
  std::vector<double> analytic;
  auto& entries = model.store.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    const Var<double>& var = entries[p].second;
    for (std::size_t i = 0; i < var.numel(); ++i) {
      if (unit(rng) >= check.fraction) continue;
      picked.emplace_back(p, i);
      analytic.push_back(var.grad().empty() ? 0.0 : var.grad()[i]);
    }
  }
  if (picked.empty()) throw std::invalid_argument("check_model_gradient: no parameters sampled");

  NoGradGuard guard;
  auto eval = [&] { return run_model(model, scene, &trace, true).loss.value()[0]; };
  Tensor<double> a({picked.size()}), n({picked.size()});
  for (std::size_t k = 0; k < picked.size(); ++k) {
    Tensor<double>& value = entries[picked[k].first].second.mutable_value();
    const std::size_t i = picked[k].second;
    const double original = value[i];
    value[i] = original + check.eps;
    const double up = eval();
    value[i] = original - check.eps;
    const double down = eval();
    value[i] = original;
    n[k] = (up - down) / (2.0 * check.eps);
    a[k] = analytic[k];
  }
  return compare_gradients(a, n);
}

}  // namespace costformer
