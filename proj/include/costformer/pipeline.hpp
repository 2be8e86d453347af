#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "costformer/cost_volume.hpp"
#include "costformer/features.hpp"
#include "costformer/gradcheck.hpp"
#include "costformer/rdact.hpp"
#include "costformer/regression_loss.hpp"
#include "costformer/rrt.hpp"
#include "costformer/scene.hpp"

namespace costformer {

struct StageConfig {
  std::size_t stage = 3;  // 3 = coarsest (1/4 resolution), 1 = finest
  std::size_t iterations = 2;
  std::size_t hypotheses = 16;
  std::size_t groups = 8;
  double inverse_width = 0.5;  // re-centering window, as a fraction of the full inverse-depth range
  RdactConfig rdact;
  std::vector<RrtConfig> rrt;  // one per iteration
  std::vector<std::size_t> reduce_hidden{8};
  std::size_t spatial_kernel = 3;
  double spatial_dilation = 1.0;

  std::size_t scale() const { return std::size_t{1} << (stage - 1); }
};

struct ModelConfig {
  std::vector<StageConfig> stages;  // coarsest first
  FeatureConfig features;
  bool use_rdact = true;
  bool use_rrt = true;
  std::uint64_t seed = 1;
};

ModelConfig default_model_config();

// Same configuration with RDACT and RRT switched off.
ModelConfig ablated(ModelConfig config);

template <typename T>
struct StageParams {
  std::optional<RdactParams<T>> rdact;
  std::vector<LinearParams<T>> reduce;
  SpatialWindowParams<T> spatial;
  std::vector<RrtParams<T>> rrt;  // per iteration, empty without RRT
};

template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> store;
  FeatureParams<T> features;
  std::vector<StageParams<T>> stages;  // aligned with config.stages
};

template <typename T>
Model<T> make_model(const ModelConfig& config);

// Quantities that are held fixed (no gradient) inside a forward pass. Recording them once and
// replaying makes the forward a smooth function of the parameters.
template <typename T>
struct StageTrace {
  std::vector<DepthHypotheses<T>> hypotheses;  // per iteration
  Tensor<T> view_weights;                      // [N x H x W]
};

template <typename T>
struct ForwardTrace {
  std::vector<StageTrace<T>> stages;
};

template <typename T>
struct StageInputs {
  CameraView<T> reference;
  std::vector<CameraView<T>> sources;
  double d_min = 2.0;
  double d_max = 6.0;
};

template <typename T>
struct StageResult {
  std::vector<Var<T>> depths;               // per iteration, [H x W]
  std::vector<AggregatedCost<T>> costs;     // per iteration, the cost fed to soft argmin
  std::vector<DepthHypotheses<T>> hypotheses;
};

// One coarse-to-fine stage. `prior` is the previous stage's depth upsampled to this resolution.
// With `replay`, hypotheses and view weights come from `trace`; otherwise they are recorded there.
template <typename T>
StageResult<T> run_stage(const StageInputs<T>& inputs, const StageParams<T>& params, const StageConfig& stage,
                         const Tensor<T>* prior, StageTrace<T>* trace = nullptr, bool replay = false);

template <typename T>
struct ModelOutput {
  std::vector<StageResult<T>> stages;
  LossTerms terms;
  Var<T> loss;
  Tensor<T> depth;  // final full-resolution depth
};

template <typename T>
ModelOutput<T> run_model(const Model<T>& model, const SyntheticScene& scene, ForwardTrace<T>* trace = nullptr,
                         bool replay = false);

// Nearest-neighbor resampling: output (i, j) takes input (i * factor, j * factor).
template <typename T>
Tensor<T> downsample_nearest(const Tensor<T>& map, std::size_t factor);
// Output (i, j) takes input (i / factor, j / factor).
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& map, std::size_t factor);

double mean_inverse_depth_error(const Tensor<float>& pred, const Tensor<float>& gt);


struct ModelGradCheckConfig {
  double fraction = 0.01;   // share of parameter elements checked
  double jitter = 0.05;     // std of the Gaussian added to every parameter first
  double eps = 1e-3;
  std::uint64_t seed = 23;
};

// Total-loss gradient of a double-precision model against central differences, with the
// hypotheses and view weights replayed from one recorded forward pass.
GradCheckReport check_model_gradient(const ModelConfig& config, const SyntheticScene& scene,
                                     const ModelGradCheckConfig& check);

}  // namespace costformer
