#include "costformer/config.hpp"

#include <fstream>
#include <initializer_list>
#include <stdexcept>

namespace costformer {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw std::invalid_argument("config: section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) throw std::invalid_argument("config: unknown key '" + section + "." + key + "'");
  }
}

template <typename U>
void read(const json& j, const char* key, U& out) {
  if (j.contains(key)) out = j.at(key).get<U>();
}

json to_json(const RdactConfig& c) {
  return {{"layers", c.layers},
          {"embed_dim", c.embed_dim},
          {"patch", c.patch},
          {"window", c.window},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"depth_attention", c.variant == AttentionVariant::depth_spatial}};
}

RdactConfig rdact_from_json(const json& j) {
  check_keys(j, "rdact", {"layers", "embed_dim", "patch", "window", "heads", "mlp_ratio", "depth_attention"});
  RdactConfig c;
  read(j, "layers", c.layers);
  read(j, "embed_dim", c.embed_dim);
  read(j, "patch", c.patch);
  read(j, "window", c.window);
  read(j, "heads", c.heads);
  read(j, "mlp_ratio", c.mlp_ratio);
  if (j.contains("depth_attention")) {
    c.variant = j.at("depth_attention").get<bool>() ? AttentionVariant::depth_spatial : AttentionVariant::spatial_only;
  }
  return c;
}

json to_json(const RrtConfig& c) {
  return {{"layers", c.layers}, {"embed_dim", c.embed_dim}, {"patch", c.patch},
          {"window", c.window}, {"heads", c.heads},         {"mlp_ratio", c.mlp_ratio}};
}

RrtConfig rrt_from_json(const json& j) {
  check_keys(j, "rrt", {"layers", "embed_dim", "patch", "window", "heads", "mlp_ratio"});
  RrtConfig c;
  read(j, "layers", c.layers);
  read(j, "embed_dim", c.embed_dim);
  read(j, "patch", c.patch);
  read(j, "window", c.window);
  read(j, "heads", c.heads);
  read(j, "mlp_ratio", c.mlp_ratio);
  return c;
}

json to_json(const StageConfig& s) {
  json rrt = json::array();
  for (const RrtConfig& r : s.rrt) rrt.push_back(to_json(r));
  return {{"stage", s.stage},
          {"iterations", s.iterations},
          {"hypotheses", s.hypotheses},
          {"groups", s.groups},
          {"inverse_width", s.inverse_width},
          {"rdact", to_json(s.rdact)},
          {"rrt", rrt},
          {"reduce_hidden", s.reduce_hidden},
          {"spatial_kernel", s.spatial_kernel},
          {"spatial_dilation", s.spatial_dilation}};
}

StageConfig stage_from_json(const json& j) {
  check_keys(j, "stage", {"stage", "iterations", "hypotheses", "groups", "inverse_width", "rdact", "rrt",
                          "reduce_hidden", "spatial_kernel", "spatial_dilation"});
  StageConfig s;
  read(j, "stage", s.stage);
  read(j, "iterations", s.iterations);
  read(j, "hypotheses", s.hypotheses);
  read(j, "groups", s.groups);
  read(j, "inverse_width", s.inverse_width);
  if (j.contains("rdact")) s.rdact = rdact_from_json(j.at("rdact"));
  if (j.contains("rrt")) {
    s.rrt.clear();
    for (const json& r : j.at("rrt")) s.rrt.push_back(rrt_from_json(r));
  }
  read(j, "reduce_hidden", s.reduce_hidden);
  read(j, "spatial_kernel", s.spatial_kernel);
  read(j, "spatial_dilation", s.spatial_dilation);
  return s;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& config) {
  json stages = json::array();
  for (const StageConfig& s : config.stages) stages.push_back(to_json(s));
  return {{"stages", stages},
          {"feature_channels", config.features.channels},
          {"use_rdact", config.use_rdact},
          {"use_rrt", config.use_rrt},
          {"seed", config.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  check_keys(j, "model", {"stages", "feature_channels", "use_rdact", "use_rrt", "seed"});
  ModelConfig config = default_model_config();
  if (j.contains("stages")) {
    config.stages.clear();
    for (const json& s : j.at("stages")) config.stages.push_back(stage_from_json(s));
  }
  read(j, "feature_channels", config.features.channels);
  read(j, "use_rdact", config.use_rdact);
  read(j, "use_rrt", config.use_rrt);
  read(j, "seed", config.seed);
  return config;
}

nlohmann::json to_json(const RunConfig& config) {
  const AdamConfig& adam = config.train.adam;
  return {{"model", to_json(config.model)},
          {"train",
           {{"steps", config.train.steps},
            {"lr", adam.lr},
            {"beta1", adam.beta1},
            {"beta2", adam.beta2},
            {"eps", adam.eps},
            {"scenes", config.train_scenes}}},
          {"scene",
           {{"height", config.scene.height},
            {"width", config.scene.width},
            {"sources", config.scene.sources},
            {"d_min", config.scene.d_min},
            {"d_max", config.scene.d_max},
            {"baseline", config.scene.baseline},
            {"focal", config.scene.focal},
            {"seed", config.scene_seed}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j, "", {"model", "train", "scene"});
  RunConfig config;
  if (j.contains("model")) config.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", {"steps", "lr", "beta1", "beta2", "eps", "scenes"});
    read(t, "steps", config.train.steps);
    read(t, "lr", config.train.adam.lr);
    read(t, "beta1", config.train.adam.beta1);
    read(t, "beta2", config.train.adam.beta2);
    read(t, "eps", config.train.adam.eps);
    read(t, "scenes", config.train_scenes);
  }
  if (j.contains("scene")) {
    const json& s = j.at("scene");
    check_keys(s, "scene", {"height", "width", "sources", "d_min", "d_max", "baseline", "focal", "seed"});
    read(s, "height", config.scene.height);
    read(s, "width", config.scene.width);
    read(s, "sources", config.scene.sources);
    read(s, "d_min", config.scene.d_min);
    read(s, "d_max", config.scene.d_max);
    read(s, "baseline", config.scene.baseline);
    read(s, "focal", config.scene.focal);
    read(s, "seed", config.scene_seed);
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return run_config_from_json(nlohmann::json::parse(in));
}

}  // namespace costformer
