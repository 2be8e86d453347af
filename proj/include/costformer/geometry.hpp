#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "costformer/autograd.hpp"
#include "costformer/tensor.hpp"

namespace costformer {

// Pinhole camera with a world-to-camera pose (X_cam = R * X_world + t).
// The reference view conventionally has R = I, t = 0.
class Camera {
 public:
  Camera();
  Camera(const Eigen::Matrix3d& K, const Eigen::Matrix3d& R, const Eigen::Vector3d& t);

  const Eigen::Matrix3d& K() const { return K_; }
  const Eigen::Matrix3d& K_inv() const { return K_inv_; }
  const Eigen::Matrix3d& R() const { return R_; }
  const Eigen::Vector3d& t() const { return t_; }

  // Intrinsics for an image downsampled by `factor` (pixel i maps to i * factor).
  Camera downscaled(double factor) const;

 private:
  Eigen::Matrix3d K_;
  Eigen::Matrix3d K_inv_;
  Eigen::Matrix3d R_;
  Eigen::Vector3d t_;
};

// Pose of `src` relative to `ref`: X_src = R * X_ref + t.
struct RelativePose {
  Eigen::Matrix3d R;
  Eigen::Vector3d t;
};
RelativePose relative_pose(const Camera& ref, const Camera& src);

template <typename T>
struct CameraView {
  Camera camera;
  Var<T> features;  // [H x W x C]
};

struct WarpedPixel {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  bool valid = false;
};

inline constexpr double kMinProjectedDepth = 1e-9;

// p_src = K_src * (R * (K_ref^-1 * p * depth) + t), dehomogenized. Valid when the projected
// depth is positive and the position lies in [0, width-1] x [0, height-1] up to kSampleBorderTolerance.
WarpedPixel warp_pixel(const Eigen::Vector2d& p, double depth, const Camera& ref, const Camera& src,
                       std::size_t src_width, std::size_t src_height);

template <typename T>
struct DepthHypotheses {
  Tensor<T> values;  // [D] shared by all pixels, or [H x W x D]

  bool per_pixel() const { return values.rank() == 3; }
  std::size_t count() const { return values.shape().back(); }
  void validate() const;
};

enum class HypothesisSpacing { inverse_depth, linear };

template <typename T>
DepthHypotheses<T> generate_hypotheses(double d_min, double d_max, std::size_t count, HypothesisSpacing spacing);

// Broadcasts shared hypotheses to [H x W x D]; per-pixel hypotheses are returned unchanged.
template <typename T>
Tensor<T> expand_hypotheses(const DepthHypotheses<T>& hyps, std::size_t height, std::size_t width);

// Per-pixel inverse-depth window of `inverse_width` centered on `center` (a depth map [H x W]),
// slid to stay inside [1/d_max, 1/d_min]. Depths increase along D.
template <typename T>
DepthHypotheses<T> recenter_hypotheses(const Tensor<T>& center, std::size_t count, double d_min, double d_max,
                                       double inverse_width);

// Differentiable projection of per-pixel depths [H x W x D] into source pixel coordinates [H*W*D x 2].
// Invalid samples are placed far outside the image and flagged in `valid`.
template <typename T>
struct ProjectedCoords {
  Var<T> coords;
  std::vector<std::uint8_t> valid;
};

template <typename T>
ProjectedCoords<T> project_depths(const Var<T>& depths, const Camera& ref, const Camera& src);

template <typename T>
struct WarpedVolume {
  Var<T> values;                    // [H x W x D x C]
  std::vector<std::uint8_t> mask;   // [H*W*D]
};

// Samples src.features at warp_pixel(p, d_j) for every reference pixel and hypothesis.
template <typename T>
WarpedVolume<T> warp_feature_volume(const CameraView<T>& src, const Var<T>& depths, const Camera& ref);

template <typename T>
WarpedVolume<T> warp_feature_volume(const CameraView<T>& src, const DepthHypotheses<T>& hyps, const Camera& ref,
                                    std::size_t height, std::size_t width);

}  // namespace costformer
