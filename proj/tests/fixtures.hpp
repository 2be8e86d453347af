#pragma once

// Shared case builders and loop oracles for geometry and cost-volume checks.

#include <Eigen/Geometry>
#include <random>

#include "costformer/cost_volume.hpp"
#include "costformer/geometry.hpp"
#include "costformer/params.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace costformer;

struct Rig {
  Camera ref, src;
};

inline Eigen::Matrix3d intrinsics(double fx, double fy, double skew, double cx, double cy) {
  Eigen::Matrix3d K;
  K << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return K;
}

// Small-baseline pair with both cameras posed in a world frame.
inline Rig random_rig(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rotation = [&](double max_angle) {
    Eigen::Vector3d axis(u(rng), u(rng), u(rng));
    return Eigen::AngleAxisd(max_angle * u(rng), axis.normalized()).toRotationMatrix();
  };
  const Camera ref(intrinsics(30.0 + 5.0 * u(rng), 31.0 + 5.0 * u(rng), 0.3 * u(rng), 15.5, 11.5), rotation(0.1),
                   Eigen::Vector3d(0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng)));
  const Camera src(intrinsics(28.0 + 5.0 * u(rng), 29.0 + 5.0 * u(rng), 0.0, 16.0, 12.0), rotation(0.1),
                   Eigen::Vector3d(0.4 * u(rng), 0.4 * u(rng), 0.1 * u(rng)));
  return {ref, src};
}

// Explicit pinhole formulas; the rigid motion goes through world coordinates.
inline Eigen::Vector3d project_oracle(const Eigen::Vector2d& p, double d, const Rig& rig) {
  const Eigen::Matrix3d& K0 = rig.ref.K();
  const double Y = (p.y() - K0(1, 2)) / K0(1, 1) * d;
  const double X = (p.x() - K0(0, 2) - K0(0, 1) * Y / d) / K0(0, 0) * d;
  const Eigen::Vector3d cam0(X, Y, d);
  const Eigen::Vector3d world = rig.ref.R().transpose() * (cam0 - rig.ref.t());
  const Eigen::Vector3d cam1 = rig.src.R() * world + rig.src.t();
  const Eigen::Matrix3d& K1 = rig.src.K();
  const double x = K1(0, 0) * cam1.x() / cam1.z() + K1(0, 1) * cam1.y() / cam1.z() + K1(0, 2);
  const double y = K1(1, 1) * cam1.y() / cam1.z() + K1(1, 2);
  return {x, y, cam1.z()};
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline LinearParams<double> lp(const Tensor<double>& w, const Tensor<double>& b = {}) {
  LinearParams<double> p;
  p.weight = Var<double>(w, true);
  if (!b.empty()) p.bias = Var<double>(b, true);
  return p;
}

inline double correlation_oracle(const Tensor<double>& f0, const Tensor<double>& fw, std::size_t y, std::size_t x,
                          std::size_t j, std::size_t g, std::size_t G) {
  const std::size_t C = f0.dim(2);
  double acc = 0.0;
  for (std::size_t c = g * (C / G); c < (g + 1) * (C / G); ++c) acc += f0.at(y, x, c) * fw.at(y, x, j, c);
  return acc * static_cast<double>(G) / static_cast<double>(C);
}

inline Tensor<double> per_pixel_hypotheses(std::size_t H, std::size_t W, std::size_t D, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> start(2.0, 3.0), step(0.2, 0.6);
  Tensor<double> h({H, W, D});
  for (std::size_t p = 0; p < H * W; ++p) {
    double d = start(rng);
    for (std::size_t j = 0; j < D; ++j) {
      h[p * D + j] = d;
      d += step(rng);
    }
  }
  return h;
}

struct AggregateCase {
  std::size_t H = 5, W = 5, D = 2, C = 4, G = 2;
  Tensor<double> cost, reference, hyps;
  SpatialWindowParams<double> params;
};

inline AggregateCase random_aggregate_case(std::uint64_t seed) {
  AggregateCase a;
  a.cost = oracle::random_tensor({a.H, a.W, a.D}, seed);
  a.reference = oracle::random_tensor({a.H, a.W, a.C}, seed + 1);
  a.hyps = per_pixel_hypotheses(a.H, a.W, a.D, seed + 2);
  a.params.base_offsets = grid_offsets(3, 1.0);
  a.params.offset_proj = lp(oracle::random_tensor({a.C, 18}, seed + 3, 0.4), oracle::random_tensor({18}, seed + 4, 0.2));
  a.params.weight_net = {lp(oracle::random_tensor({a.G, 3}, seed + 5), oracle::random_tensor({3}, seed + 6)),
                         lp(oracle::random_tensor({3, 1}, seed + 7), oracle::random_tensor({1}, seed + 8))};
  a.params.groups = a.G;
  a.params.depth_temperature = 0.7;
  return a;
}

// Brute-force weighted window sum in double precision.
inline Tensor<double> aggregate_oracle(const AggregateCase& a) {
  const std::size_t K = a.params.kernel_size();
  const oracle::Vec cost = oracle::vec(a.cost), ref = oracle::vec(a.reference);
  oracle::Vec inverse = oracle::vec(a.hyps);
  for (double& v : inverse) v = 1.0 / v;
  Tensor<double> out({a.H, a.W, a.D});
  for (std::size_t y = 0; y < a.H; ++y) {
    for (std::size_t x = 0; x < a.W; ++x) {
      const std::size_t p = y * a.W + x;
      oracle::Vec center(ref.begin() + p * a.C, ref.begin() + (p + 1) * a.C);
      const oracle::Vec delta = oracle::linear(center, 1, a.params.offset_proj);
      for (std::size_t j = 0; j < a.D; ++j) {
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          const double qx = x + a.params.base_offsets[k][0] + delta[2 * k];
          const double qy = y + a.params.base_offsets[k][1] + delta[2 * k + 1];
          bool valid = false;
          const oracle::Vec f = oracle::bilinear(ref, a.H, a.W, a.C, qx, qy, &valid);
          if (!valid) continue;
          oracle::Vec corr(a.G, 0.0);
          for (std::size_t g = 0; g < a.G; ++g) {
            for (std::size_t c = g * (a.C / a.G); c < (g + 1) * (a.C / a.G); ++c) corr[g] += center[c] * f[c];
            corr[g] *= static_cast<double>(a.G) / static_cast<double>(a.C);
          }
          oracle::Vec hidden = oracle::linear(corr, 1, a.params.weight_net[0]);
          for (double& v : hidden) v = oracle::gelu(v);
          const double w = sigmoid(oracle::linear(hidden, 1, a.params.weight_net[1])[0]);
          const double inv_q = oracle::bilinear(inverse, a.H, a.W, a.D, qx, qy, &valid)[j];
          const double dk = sigmoid(-std::abs(inv_q - inverse[p * a.D + j]) / a.params.depth_temperature);
          const double cq = oracle::bilinear(cost, a.H, a.W, a.D, qx, qy, &valid)[j];
          num += w * dk * cq;
          den += w * dk;
        }
        out.at(y, x, j) = den > 0.0 ? num / den : a.cost.at(y, x, j);
      }
    }
  }
  return out;
}

inline AggregatedCost<double> run_aggregate(const AggregateCase& a) {
  return adaptive_spatial_aggregate(AggregatedCost<double>{Var<double>(a.cost)}, a.params, Var<double>(a.reference),
                                    DepthHypotheses<double>{a.hyps});
}

}  // namespace fixture
