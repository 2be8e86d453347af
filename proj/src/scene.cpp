#include "costformer/scene.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace costformer {

namespace {

double lattice(std::int64_t x, std::int64_t y, std::uint64_t seed) {
  std::uint64_t h = seed * 0x9E3779B97F4A7C15ull;
  h ^= static_cast<std::uint64_t>(x) * 0xBF58476D1CE4E5B9ull;
  h ^= static_cast<std::uint64_t>(y) * 0x94D049BB133111EBull;
  h ^= h >> 31;
  h *= 0xD6E8FEB86659FD93ull;
  h ^= h >> 32;
  return static_cast<double>(h >> 11) / static_cast<double>(1ull << 53);
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(double u, double v, std::uint64_t seed) {
  const double fu = std::floor(u), fv = std::floor(v);
  const auto x = static_cast<std::int64_t>(fu), y = static_cast<std::int64_t>(fv);
  const double a = smoothstep(u - fu), b = smoothstep(v - fv);
  const double top = (1 - a) * lattice(x, y, seed) + a * lattice(x + 1, y, seed);
  const double bottom = (1 - a) * lattice(x, y + 1, seed) + a * lattice(x + 1, y + 1, seed);
  return (1 - b) * top + b * bottom;
}

Eigen::Matrix3d small_rotation(std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> angle(-max_angle, max_angle);
  Eigen::Matrix3d R = (Eigen::AngleAxisd(angle(rng), Eigen::Vector3d::UnitX()) *
                       Eigen::AngleAxisd(angle(rng), Eigen::Vector3d::UnitY()) *
                       Eigen::AngleAxisd(angle(rng), Eigen::Vector3d::UnitZ()))
                          .toRotationMatrix();
  return R;
}

}  // namespace

double plane_texture(double u, double v, std::uint64_t seed) {
  double total = 0.0, norm = 0.0, amplitude = 1.0, frequency = 1.25;
  for (int octave = 0; octave < 4; ++octave) {
    total += amplitude * value_noise(u * frequency, v * frequency, seed + 101 * octave);
    norm += amplitude;
    amplitude *= 0.55;
    frequency *= 2.0;
  }
  return total / norm;
}

SyntheticScene make_synthetic_scene(const SceneConfig& config, std::uint64_t seed) {
  if (config.height == 0 || config.width == 0) throw std::invalid_argument("scene: empty image");
  if (!(config.d_min > 0.0 && config.d_min < config.d_max)) throw std::invalid_argument("scene: bad depth range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t H = config.height, W = config.width;

  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  K(0, 0) = config.focal * static_cast<double>(W) / 64.0;
  K(1, 1) = config.focal * static_cast<double>(W) / 64.0;
  K(0, 2) = 0.5 * static_cast<double>(W - 1);
  K(1, 2) = 0.5 * static_cast<double>(H - 1);

  // Inverse depth is affine in pixel coordinates: 1/z = ax * x + ay * y + c.
  const double inv_lo = 1.0 / (config.d_max - 0.1 * (config.d_max - config.d_min));
  const double inv_hi = 1.0 / (config.d_min + 0.1 * (config.d_max - config.d_min));
  const double half = 0.5 * (inv_hi - inv_lo);
  const double mid = 0.5 * (inv_lo + inv_hi) + 0.1 * half * (2.0 * unit(rng) - 1.0);
  const double gx = 2.0 * 0.8 * half * (0.4 + 0.6 * unit(rng)) * (unit(rng) < 0.5 ? 1.0 : -1.0);
  const double gy = (2.0 * 0.8 * half - std::abs(gx)) * unit(rng) * (unit(rng) < 0.5 ? 1.0 : -1.0);
  const double ax = gx / static_cast<double>(W - 1);
  const double ay = gy / static_cast<double>(H - 1);
  const double c0 = mid - 0.5 * gx - 0.5 * gy;
  const Eigen::Vector3d n = K.transpose() * Eigen::Vector3d(ax, ay, c0);

  // In-plane basis for texture coordinates.
  const Eigen::Vector3d unit_n = n.normalized();
  Eigen::Vector3d e1 = unit_n.cross(Eigen::Vector3d::UnitY()).normalized();
  Eigen::Vector3d e2 = unit_n.cross(e1).normalized();
  const std::uint64_t texture_seed = seed * 7919 + 13;

  SyntheticScene scene;
  scene.d_min = config.d_min;
  scene.d_max = config.d_max;
  scene.plane_normal = n;

  auto render = [&](const Camera& cam, Tensor<float>* depth) {
    Tensor<float> image({H, W, 3});
    const Eigen::Matrix3d Rt = cam.R().transpose();
    const Eigen::Vector3d center = -Rt * cam.t();
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const Eigen::Vector3d dir =
            Rt * (cam.K_inv() * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0));
        const double denom = n.dot(dir);
        if (!(denom > 0.0)) throw std::runtime_error("scene: camera ray misses the plane");
        const double s = (1.0 - n.dot(center)) / denom;
        if (!(s > 0.0)) throw std::runtime_error("scene: plane behind the camera");
        const Eigen::Vector3d X = center + s * dir;
        if (depth) depth->at(y, x) = static_cast<float>((cam.R() * X + cam.t()).z());
        const double u = X.dot(e1), v = X.dot(e2);
        for (std::size_t c = 0; c < 3; ++c) {
          image.at(y, x, c) = static_cast<float>(plane_texture(u, v, texture_seed + 1000 * c));
        }
      }
    }
    return image;
  };

  scene.reference.camera = Camera(K, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
  scene.depth = Tensor<float>({H, W});
  scene.reference.image = render(scene.reference.camera, &scene.depth);

  const double base_angle = 2.0 * M_PI * unit(rng);
  for (std::size_t k = 0; k < config.sources; ++k) {
    const double phi = base_angle + 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(config.sources) +
                       0.2 * (unit(rng) - 0.5);
    const double len = config.baseline * (0.8 + 0.4 * unit(rng));
    const Eigen::Vector3d center(len * std::cos(phi), len * std::sin(phi), 0.1 * (unit(rng) - 0.5));
    const Eigen::Matrix3d R = small_rotation(rng, 0.02);
    const Eigen::Vector3d t = -R * center;
    Camera cam(K, R, t);
    scene.sources.push_back({cam, render(cam, nullptr)});
  }
  return scene;
}

}  // namespace costformer
