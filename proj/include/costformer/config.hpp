#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "costformer/pipeline.hpp"
#include "costformer/scene.hpp"
#include "costformer/train.hpp"

namespace costformer {

struct RunConfig {
  ModelConfig model = default_model_config();
  TrainConfig train;
  SceneConfig scene;
  std::size_t train_scenes = 1;
  std::uint64_t scene_seed = 1;
};

nlohmann::json to_json(const RunConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace costformer
