#include "costformer/geometry.hpp"

#include <Eigen/LU>
#include <cmath>
#include <stdexcept>

#include "costformer/ops.hpp"

namespace costformer {

namespace {

constexpr double kPoseTolerance = 1e-5;
constexpr double kOutside = -1e6;

}  // namespace

Camera::Camera() : Camera(Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()) {}

Camera::Camera(const Eigen::Matrix3d& K, const Eigen::Matrix3d& R, const Eigen::Vector3d& t) : K_(K), R_(R), t_(t) {
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
    throw std::invalid_argument("camera: intrinsics must be upper triangular");
  }
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
  if (std::abs(K.determinant()) < 1e-12) throw std::invalid_argument("camera: singular intrinsics");
  if ((R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > kPoseTolerance ||
      std::abs(R.determinant() - 1.0) > kPoseTolerance) {
    throw std::invalid_argument("camera: rotation must be orthonormal with det +1");
  }
  K_inv_ = K.inverse();
}

Camera Camera::downscaled(double factor) const {
  Eigen::Matrix3d K = K_;
  K.row(0) /= factor;
  K.row(1) /= factor;
  return Camera(K, R_, t_);
}

RelativePose relative_pose(const Camera& ref, const Camera& src) {
  RelativePose pose;
  pose.R = src.R() * ref.R().transpose();
  pose.t = src.t() - pose.R * ref.t();
  return pose;
}

WarpedPixel warp_pixel(const Eigen::Vector2d& p, double depth, const Camera& ref, const Camera& src,
                       std::size_t src_width, std::size_t src_height) {
  if (!(depth > 0.0)) throw std::invalid_argument("warp_pixel: depth must be positive");
  const RelativePose pose = relative_pose(ref, src);
  const Eigen::Vector3d h = src.K() * (pose.R * (ref.K_inv() * Eigen::Vector3d(p.x(), p.y(), 1.0) * depth) + pose.t);
  WarpedPixel out;
  if (!(h.z() > kMinProjectedDepth)) return out;
  out.position = Eigen::Vector2d(h.x() / h.z(), h.y() / h.z());
  const double tol = kSampleBorderTolerance;
  out.valid = out.position.x() >= -tol && out.position.y() >= -tol &&
              out.position.x() <= static_cast<double>(src_width - 1) + tol &&
              out.position.y() <= static_cast<double>(src_height - 1) + tol;
  return out;
}

template <typename T>
void DepthHypotheses<T>::validate() const {
  if (values.rank() != 1 && values.rank() != 3) throw std::invalid_argument("hypotheses: expected [D] or [H,W,D]");
  const std::size_t d = count();
  for (std::size_t base = 0; base < values.numel(); base += d) {
    for (std::size_t j = 0; j < d; ++j) {
      if (!(values[base + j] > T(0))) throw std::invalid_argument("hypotheses: depths must be positive");
      if (j > 0 && !(values[base + j] > values[base + j - 1])) {
        throw std::invalid_argument("hypotheses: depths must be strictly increasing");
      }
    }
  }
}

template <typename T>
DepthHypotheses<T> generate_hypotheses(double d_min, double d_max, std::size_t count, HypothesisSpacing spacing) {
  if (!(d_min > 0.0) || !(d_max > d_min)) throw std::invalid_argument("generate_hypotheses: need 0 < d_min < d_max");
  if (count == 0) throw std::invalid_argument("generate_hypotheses: count must be >= 1");
  Tensor<T> values({count});
  if (count == 1) {
    values[0] = spacing == HypothesisSpacing::linear ? static_cast<T>(0.5 * (d_min + d_max))
                                                     : static_cast<T>(2.0 / (1.0 / d_min + 1.0 / d_max));
    return {values};
  }
  for (std::size_t j = 0; j < count; ++j) {
    const double a = static_cast<double>(j) / static_cast<double>(count - 1);
    if (spacing == HypothesisSpacing::linear) {
      values[j] = static_cast<T>(d_min + a * (d_max - d_min));
    } else {
      const double inv = 1.0 / d_min + a * (1.0 / d_max - 1.0 / d_min);
      values[j] = static_cast<T>(1.0 / inv);
    }
  }
  values[0] = static_cast<T>(d_min);
  values[count - 1] = static_cast<T>(d_max);
  return {values};
}

template <typename T>
Tensor<T> expand_hypotheses(const DepthHypotheses<T>& hyps, std::size_t height, std::size_t width) {
  if (hyps.per_pixel()) {
    if (hyps.values.dim(0) != height || hyps.values.dim(1) != width) {
      throw std::invalid_argument("expand_hypotheses: extent mismatch");
    }
    return hyps.values;
  }
  const std::size_t d = hyps.count();
  Tensor<T> out({height, width, d});
  for (std::size_t i = 0; i < height * width; ++i) {
    std::copy_n(hyps.values.data().begin(), d, out.data().begin() + i * d);
  }
  return out;
}

template <typename T>
DepthHypotheses<T> recenter_hypotheses(const Tensor<T>& center, std::size_t count, double d_min, double d_max,
                                       double inverse_width) {
  if (center.rank() != 2) throw std::invalid_argument("recenter_hypotheses: center must be [H x W]");
  if (count == 0 || !(inverse_width > 0.0)) throw std::invalid_argument("recenter_hypotheses: bad window");
  const double inv_lo = 1.0 / d_max;
  const double inv_hi = 1.0 / d_min;
  const double width = std::min(inverse_width, inv_hi - inv_lo);
  const std::size_t height = center.dim(0), cols = center.dim(1);
  Tensor<T> values({height, cols, count});
  for (std::size_t i = 0; i < height * cols; ++i) {
    const double c = 1.0 / std::clamp(static_cast<double>(center[i]), d_min, d_max);
    const double top = std::clamp(c + 0.5 * width, inv_lo + width, inv_hi);
    for (std::size_t j = 0; j < count; ++j) {
      const double a = count == 1 ? 0.5 : static_cast<double>(j) / static_cast<double>(count - 1);
      values[i * count + j] = static_cast<T>(1.0 / (top - a * width));
    }
  }
  return {values};
}

template <typename T>
ProjectedCoords<T> project_depths(const Var<T>& depths, const Camera& ref, const Camera& src) {
  const Tensor<T>& dv = depths.value();
  if (dv.rank() != 3) throw std::invalid_argument("project_depths: depths must be [H x W x D]");
  const std::size_t height = dv.dim(0), width = dv.dim(1), count = dv.dim(2);
  const RelativePose pose = relative_pose(ref, src);
  const Eigen::Matrix3d M = src.K() * pose.R * ref.K_inv();
  const Eigen::Vector3d v = src.K() * pose.t;

  const std::size_t n = height * width * count;
  Tensor<T> coords({n, 2});
  auto jac = std::make_shared<std::vector<T>>(2 * n, T(0));
  std::vector<std::uint8_t> valid(n, 0);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const Eigen::Vector3d u = M * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0);
      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t i = (y * width + x) * count + j;
        const double d = static_cast<double>(dv[i]);
        const Eigen::Vector3d h = d * u + v;
        if (!(d > 0.0) || !(h.z() > kMinProjectedDepth)) {
          coords[2 * i] = static_cast<T>(kOutside);
          coords[2 * i + 1] = static_cast<T>(kOutside);
          continue;
        }
        valid[i] = 1;
        coords[2 * i] = static_cast<T>(h.x() / h.z());
        coords[2 * i + 1] = static_cast<T>(h.y() / h.z());
        (*jac)[2 * i] = static_cast<T>((u.x() * h.z() - h.x() * u.z()) / (h.z() * h.z()));
        (*jac)[2 * i + 1] = static_cast<T>((u.y() * h.z() - h.y() * u.z()) / (h.z() * h.z()));
      }
    }
  }
  Var<T> out = Var<T>::make_result(std::move(coords), {&depths}, [jac](Node<T>& self) {
    Tensor<T>& g = self.input(0).grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      g[i] += self.grad[2 * i] * (*jac)[2 * i] + self.grad[2 * i + 1] * (*jac)[2 * i + 1];
    }
  });
  return {std::move(out), std::move(valid)};
}

template <typename T>
WarpedVolume<T> warp_feature_volume(const CameraView<T>& src, const Var<T>& depths, const Camera& ref) {
  const Shape& ds = depths.shape();
  const Tensor<T>& features = src.features.value();
  if (features.rank() != 3) throw std::invalid_argument("warp_feature_volume: features must be [H x W x C]");
  ProjectedCoords<T> projected = project_depths(depths, ref, src.camera);
  BilinearSample<T> sampled = bilinear_sample(src.features, projected.coords);
  for (std::size_t i = 0; i < sampled.valid.size(); ++i) sampled.valid[i] &= projected.valid[i];
  Var<T> values = reshape(sampled.values, {ds[0], ds[1], ds[2], features.dim(2)});
  return {std::move(values), std::move(sampled.valid)};
}

template <typename T>
WarpedVolume<T> warp_feature_volume(const CameraView<T>& src, const DepthHypotheses<T>& hyps, const Camera& ref,
                                    std::size_t height, std::size_t width) {
  return warp_feature_volume(src, Var<T>(expand_hypotheses(hyps, height, width)), ref);
}

#define COSTFORMER_INSTANTIATE_GEOMETRY(T)                                                                      \
  template struct DepthHypotheses<T>;                                                                           \
  template DepthHypotheses<T> generate_hypotheses<T>(double, double, std::size_t, HypothesisSpacing);          \
  template Tensor<T> expand_hypotheses(const DepthHypotheses<T>&, std::size_t, std::size_t);                    \
  template DepthHypotheses<T> recenter_hypotheses(const Tensor<T>&, std::size_t, double, double, double);       \
  template ProjectedCoords<T> project_depths(const Var<T>&, const Camera&, const Camera&);                      \
  template WarpedVolume<T> warp_feature_volume(const CameraView<T>&, const Var<T>&, const Camera&);             \
  template WarpedVolume<T> warp_feature_volume(const CameraView<T>&, const DepthHypotheses<T>&, const Camera&,  \
                                               std::size_t, std::size_t);

COSTFORMER_INSTANTIATE_GEOMETRY(float)
COSTFORMER_INSTANTIATE_GEOMETRY(double)

}  // namespace costformer
