#include "costformer/pipeline.hpp"

#include <cmath>
#include <stdexcept>

namespace costformer {

ModelConfig default_model_config() {
  ModelConfig config;
  const std::size_t layers[] = {4, 2, 2};
  const std::size_t embed[] = {8, 8, 4};
  const std::size_t iterations[] = {2, 2, 1};
  const std::size_t hypotheses[] = {16, 8, 4};
  const std::size_t groups[] = {8, 8, 4};
  const double widths[] = {0.5, 0.25, 0.125};
  const std::vector<std::size_t> rrt_dims[] = {{32, 64}, {16, 16}, {8}};
  for (std::size_t s = 0; s < 3; ++s) {
    StageConfig stage;
    stage.stage = 3 - s;
    stage.iterations = iterations[s];
    stage.hypotheses = hypotheses[s];
    stage.groups = groups[s];
    stage.inverse_width = widths[s];
    stage.rdact.layers = layers[s];
    stage.rdact.embed_dim = embed[s];
    for (std::size_t dim : rrt_dims[s]) {
      RrtConfig rrt;
      rrt.embed_dim = dim;
      stage.rrt.push_back(rrt);
    }
    config.stages.push_back(stage);
  }
  return config;
}

ModelConfig ablated(ModelConfig config) {
  config.use_rdact = false;
  config.use_rrt = false;
  return config;
}

namespace {

void validate(const ModelConfig& config) {
  if (config.stages.empty()) throw std::invalid_argument("model: at least one stage required");
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    const StageConfig& stage = config.stages[s];
    if (stage.stage == 0 || stage.stage > config.features.channels.size()) {
      throw std::invalid_argument("model: stage index outside the feature pyramid");
    }
    if (s > 0 && stage.stage + 1 != config.stages[s - 1].stage) {
      throw std::invalid_argument("model: stages must run coarse to fine one level at a time");
    }
    if (stage.iterations == 0 || stage.hypotheses == 0) throw std::invalid_argument("model: empty stage");
    if (config.use_rrt && stage.rrt.size() != stage.iterations) {
      throw std::invalid_argument("model: one RRT config per iteration required");
    }
    if (config.features.channels[stage.stage - 1] % stage.groups != 0) {
      throw std::invalid_argument("model: groups must divide the stage feature channels");
    }
  }
}

}  // namespace

template <typename T>
Model<T> make_model(const ModelConfig& config) {
  validate(config);
  Model<T> model{config, ParamStore<T>(config.seed), {}, {}};
  model.features = make_feature_params(model.store, "features", config.features);
  for (const StageConfig& stage : config.stages) {
    const std::string prefix = "stage" + std::to_string(stage.stage);
    const std::size_t channels = config.features.channels[stage.stage - 1];
    StageParams<T> p;
    if (config.use_rdact) p.rdact = make_rdact_params(model.store, prefix + ".rdact", stage.rdact, stage.groups);
    std::size_t in = stage.groups;
    for (std::size_t i = 0; i <= stage.reduce_hidden.size(); ++i) {
      const std::size_t out = i < stage.reduce_hidden.size() ? stage.reduce_hidden[i] : 1;
      p.reduce.push_back(make_linear(model.store, prefix + ".reduce" + std::to_string(i), in, out));
      in = out;
    }
    p.spatial.base_offsets = grid_offsets(stage.spatial_kernel, stage.spatial_dilation);
    p.spatial.groups = stage.groups;
    p.spatial.offset_proj = make_linear(model.store, prefix + ".spatial.offset", channels,
                                        2 * p.spatial.kernel_size(), Init::zeros);
    p.spatial.weight_net.push_back(make_linear(model.store, prefix + ".spatial.weight0", stage.groups, 8));
    p.spatial.weight_net.push_back(make_linear(model.store, prefix + ".spatial.weight1", 8, 1));
    // Inverse-depth differences are measured in units of one full-range hypothesis step.
    p.spatial.depth_temperature = 1.0 / static_cast<double>(stage.hypotheses);
    if (config.use_rrt) {
      for (std::size_t i = 0; i < stage.iterations; ++i) {
        p.rrt.push_back(make_rrt_params(model.store, prefix + ".rrt" + std::to_string(i), stage.rrt[i],
                                        stage.hypotheses));
      }
    }
    model.stages.push_back(std::move(p));
  }
  return model;
}

template <typename T>
Tensor<T> downsample_nearest(const Tensor<T>& map, std::size_t factor) {
  if (map.rank() != 2 || factor == 0) throw std::invalid_argument("downsample_nearest: expected [H x W]");
  const std::size_t H = (map.dim(0) + factor - 1) / factor, W = (map.dim(1) + factor - 1) / factor;
  Tensor<T> out({H, W});
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) out.at(i, j) = map.at(i * factor, j * factor);
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& map, std::size_t factor) {
  if (map.rank() != 2 || factor == 0) throw std::invalid_argument("upsample_nearest: expected [H x W]");
  const std::size_t H = map.dim(0) * factor, W = map.dim(1) * factor;
  Tensor<T> out({H, W});
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) out.at(i, j) = map.at(i / factor, j / factor);
  }
  return out;
}

template <typename T>
StageResult<T> run_stage(const StageInputs<T>& inputs, const StageParams<T>& params, const StageConfig& stage,
                         const Tensor<T>* prior, StageTrace<T>* trace, bool replay) {
  if (replay && (!trace || trace->hypotheses.size() != stage.iterations)) {
    throw std::invalid_argument("run_stage: replay requires a recorded trace");
  }
  if (inputs.sources.empty()) throw std::invalid_argument("run_stage: at least one source view required");
  const Shape& fs = inputs.reference.features.shape();
  const std::size_t H = fs[0], W = fs[1];
  const double full_width = 1.0 / inputs.d_min - 1.0 / inputs.d_max;
  if (trace && !replay) *trace = StageTrace<T>{};

  StageResult<T> result;
  Tensor<T> view_weights;
  for (std::size_t it = 0; it < stage.iterations; ++it) {
    DepthHypotheses<T> hyps;
    if (replay) {
      hyps = trace->hypotheses[it];
    } else if (it == 0 && !prior) {
      hyps = generate_hypotheses<T>(inputs.d_min, inputs.d_max, stage.hypotheses, HypothesisSpacing::inverse_depth);
    } else {
      const Tensor<T>& center = it == 0 ? *prior : result.depths.back().value();
      hyps = recenter_hypotheses(center, stage.hypotheses, inputs.d_min, inputs.d_max,
                                 stage.inverse_width * full_width);
    }
    if (trace && !replay) trace->hypotheses.push_back(hyps);

    std::vector<CostVolume<T>> per_view;
    for (const CameraView<T>& src : inputs.sources) {
      WarpedVolume<T> warped = warp_feature_volume(src, hyps, inputs.reference.camera, H, W);
      per_view.push_back(groupwise_correlation(inputs.reference.features, warped.values, warped.mask, stage.groups));
    }
    if (replay) {
      view_weights = trace->view_weights;
    } else if (it == 0) {
      view_weights = view_weights_from_costs(per_view);
      if (trace) trace->view_weights = view_weights;
    }
    result.hypotheses.push_back(hyps);
    CostVolume<T> cv = fuse_views(per_view, Var<T>(view_weights));
    if (params.rdact) cv = rdact_forward(cv, *params.rdact);
    AggregatedCost<T> cost = reduce_groups(cv, params.reduce);
    cost = adaptive_spatial_aggregate(cost, params.spatial, inputs.reference.features, hyps);
    if (!params.rrt.empty()) cost = rrt_forward(cost, params.rrt.at(it));
    result.depths.push_back(soft_argmin(cost, hyps));
    result.costs.push_back(cost);
  }
  return result;
}

namespace {

template <typename T>
CameraView<T> make_view(const Camera& camera, const Var<T>& features, std::size_t scale) {
  return {scale == 1 ? camera : camera.downscaled(static_cast<double>(scale)), features};
}

}  // namespace

template <typename T>
ModelOutput<T> run_model(const Model<T>& model, const SyntheticScene& scene, ForwardTrace<T>* trace, bool replay) {
  const ModelConfig& config = model.config;
  const std::size_t levels = config.features.channels.size();
  const std::size_t factor = std::size_t{1} << (levels - 1);
  if (scene.height() % factor != 0 || scene.width() % factor != 0) {
    throw std::invalid_argument("run_model: image extents must be divisible by " + std::to_string(factor));
  }
  if (replay && (!trace || trace->stages.size() != config.stages.size())) {
    throw std::invalid_argument("run_model: replay requires a recorded trace");
  }
  if (trace && !replay) trace->stages.assign(config.stages.size(), StageTrace<T>{});

  std::vector<std::vector<Var<T>>> features;  // [view][level]
  features.push_back(extract_features(Var<T>(scene.reference.image.cast<T>()), model.features));
  for (const SceneView& src : scene.sources) {
    features.push_back(extract_features(Var<T>(src.image.cast<T>()), model.features));
  }
  const Tensor<T> gt = scene.depth.cast<T>();

  ModelOutput<T> out;
  std::vector<Var<T>> loss_terms;
  Tensor<T> prior;
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    const StageConfig& stage = config.stages[s];
    const std::size_t level = stage.stage - 1;
    const std::size_t scale = stage.scale();
    StageInputs<T> inputs;
    inputs.reference = make_view(scene.reference.camera, features[0][level], scale);
    for (std::size_t v = 0; v < scene.sources.size(); ++v) {
      inputs.sources.push_back(make_view(scene.sources[v].camera, features[v + 1][level], scale));
    }
    inputs.d_min = scene.d_min;
    inputs.d_max = scene.d_max;
    StageTrace<T>* stage_trace = trace ? &trace->stages[s] : nullptr;
    StageResult<T> result =
        run_stage(inputs, model.stages[s], stage, prior.empty() ? nullptr : &prior, stage_trace, replay);

    Tensor<T> gt_stage = downsample_nearest(gt, scale);
    for (T& v : gt_stage.data()) v = T(1) / v;
    std::vector<double> stage_terms;
    for (const Var<T>& depth : result.depths) {
      Var<T> term = stage_loss(reciprocal(depth), gt_stage, {});
      stage_terms.push_back(static_cast<double>(term.value()[0]));
      loss_terms.push_back(term);
    }
    out.terms.per_stage_per_iter.push_back(std::move(stage_terms));
    if (s + 1 < config.stages.size()) prior = upsample_nearest(result.depths.back().value(), 2);
    out.stages.push_back(std::move(result));
  }
  out.loss = sum_terms(loss_terms);
  const Tensor<T>& last = out.stages.back().depths.back().value();
  out.depth = config.stages.back().scale() == 1 ? last : upsample_nearest(last, config.stages.back().scale());
  return out;
}

double mean_inverse_depth_error(const Tensor<float>& pred, const Tensor<float>& gt) {
  if (pred.shape() != gt.shape()) throw std::invalid_argument("mean_inverse_depth_error: shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    total += std::abs(1.0 / static_cast<double>(pred[i]) - 1.0 / static_cast<double>(gt[i]));
  }
  return total / static_cast<double>(gt.numel());
}

#define COSTFORMER_INSTANTIATE_PIPELINE(T)                                                                    \
  template Model<T> make_model(const ModelConfig&);                                                          \
  template Tensor<T> downsample_nearest(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t);                                        \
  template StageResult<T> run_stage(const StageInputs<T>&, const StageParams<T>&, const StageConfig&,        \
                                    const Tensor<T>*, StageTrace<T>*, bool);                                 \
  template ModelOutput<T> run_model(const Model<T>&, const SyntheticScene&, ForwardTrace<T>*, bool);

COSTFORMER_INSTANTIATE_PIPELINE(float)
COSTFORMER_INSTANTIATE_PIPELINE(double)

}  // namespace costformer
