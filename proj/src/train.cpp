#include "costformer/train.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace costformer {

template <typename T>
Adam<T>::Adam(ParamStore<T>& store, const AdamConfig& config) : store_(&store), config_(config) {
  for (const auto& [name, var] : store.entries()) {
    m_.emplace_back(var.numel(), 0.0);
    v_.emplace_back(var.numel(), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  auto& entries = store_->entries();
  if (entries.size() != m_.size()) throw std::logic_error("adam: parameter set changed after construction");
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Var<T>& var = entries[p].second;
    const Tensor<T>& grad = var.grad();
    if (grad.empty()) continue;
    Tensor<T>& value = var.mutable_value();
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double g = static_cast<double>(grad[i]);
      m_[p][i] = config_.beta1 * m_[p][i] + (1.0 - config_.beta1) * g;
      v_[p][i] = config_.beta2 * v_[p][i] + (1.0 - config_.beta2) * g * g;
      const double update = config_.lr * (m_[p][i] / c1) / (std::sqrt(v_[p][i] / c2) + config_.eps);
      value[i] = static_cast<T>(static_cast<double>(value[i]) - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

TrainResult train(Model<float>& model, const std::vector<SyntheticScene>& scenes, const TrainConfig& config,
                  const std::function<void(std::size_t, double)>& on_step) {
  if (scenes.empty()) throw std::invalid_argument("train: at least one scene required");
  Adam<float> optimizer(model.store, config.adam);
  TrainResult result;
  for (std::size_t step = 0; step < config.steps; ++step) {
    model.store.zero_grad();
    ModelOutput<float> out = run_model(model, scenes[step % scenes.size()]);
    const double loss = static_cast<double>(out.loss.value()[0]);
    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "train: non-finite loss at step " << step << "; terms:";
      for (const auto& stage : out.terms.per_stage_per_iter) {
        for (double t : stage) os << ' ' << t;
      }
      throw std::runtime_error(os.str());
    }
    result.losses.push_back(loss);
    out.loss.backward();
    optimizer.step();
    if (on_step) on_step(step, loss);
  }
  return result;
}

double evaluate(const Model<float>& model, const std::vector<SyntheticScene>& scenes) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: no scenes");
  NoGradGuard guard;
  double total = 0.0;
  for (const SyntheticScene& scene : scenes) {
    total += mean_inverse_depth_error(run_model(model, scene).depth, scene.depth);
  }
  return total / static_cast<double>(scenes.size());
}

}  // namespace costformer
