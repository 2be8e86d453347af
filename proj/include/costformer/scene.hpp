#pragma once

#include <cstdint>
#include <vector>

#include "costformer/geometry.hpp"
#include "costformer/tensor.hpp"

namespace costformer {

struct SceneView {
  Camera camera;
  Tensor<float> image;  // [H x W x 3] in [0, 1]
};

struct SyntheticScene {
  SceneView reference;
  std::vector<SceneView> sources;
  Tensor<float> depth;  // reference ground truth [H x W]
  double d_min = 2.0;
  double d_max = 6.0;
  Eigen::Vector3d plane_normal = Eigen::Vector3d::UnitZ();  // plane: n . X = 1 in reference coordinates

  std::size_t height() const { return depth.dim(0); }
  std::size_t width() const { return depth.dim(1); }
};

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t sources = 2;
  double d_min = 2.0;
  double d_max = 6.0;
  double baseline = 0.5;
  double focal = 64.0;
};

// Textured slanted plane seen by a reference camera at the origin and `sources` displaced cameras.
SyntheticScene make_synthetic_scene(const SceneConfig& config, std::uint64_t seed);

// Smooth procedural texture value in [0, 1] at plane coordinates (u, v).
double plane_texture(double u, double v, std::uint64_t seed);

}  // namespace costformer
