#pragma once

#include <functional>
#include <vector>

#include "costformer/params.hpp"
#include "costformer/pipeline.hpp"

namespace costformer {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(ParamStore<T>& store, const AdamConfig& config);

  // Applies one update from the gradients currently held by the parameters.
  void step();
  std::size_t steps() const { return steps_; }

 private:
  ParamStore<T>* store_;
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct TrainConfig {
  std::size_t steps = 500;
  AdamConfig adam;
};

struct TrainResult {
  std::vector<double> losses;  // one per step, before the update
};

// Step k trains on scenes[k % scenes.size()]. Throws std::runtime_error on a non-finite loss.
TrainResult train(Model<float>& model, const std::vector<SyntheticScene>& scenes, const TrainConfig& config,
                  const std::function<void(std::size_t, double)>& on_step = {});

// Mean absolute inverse-depth error of the final prediction, averaged over scenes.
double evaluate(const Model<float>& model, const std::vector<SyntheticScene>& scenes);

}  // namespace costformer
