#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "costformer/params.hpp"
#include "costformer/scene.hpp"

namespace costformer {

inline constexpr char kCheckpointMagic[8] = {'C', 'F', 'O', 'R', 'M', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor<float>>> entries;
  std::string config;  // JSON snapshot, may be empty
};

Checkpoint snapshot(const ParamStore<float>& store, std::string config = {});
// Copies values into `store`; names and shapes must match exactly.
void restore(ParamStore<float>& store, const Checkpoint& checkpoint);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Little-endian PFM with scale -1; [H x W] writes "Pf", [H x W x 3] writes "PF".
void write_pfm(const std::filesystem::path& path, const Tensor<float>& image);
Tensor<float> read_pfm(const std::filesystem::path& path);

// 16-bit grayscale PNG of `map` linearly quantized from [lo, hi] to [0, 65535].
void write_png16(const std::filesystem::path& path, const Tensor<float>& map, double lo, double hi);

// Plain text: "K" then three rows, "Rt" then three rows of four values.
void write_camera(const std::filesystem::path& path, const Camera& camera);
Camera read_camera(const std::filesystem::path& path);

// image0.pfm / cam0.txt is the reference; depth.pfm is its ground truth; scene.json holds the range.
void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene);
SyntheticScene load_scene(const std::filesystem::path& dir);

}  // namespace costformer
