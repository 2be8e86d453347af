#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <random>

#include "costformer/geometry.hpp"
#include "costformer/gradcheck.hpp"
#include "fixtures.hpp"

using namespace costformer;
using namespace fixture;

TEST(Camera, RejectsInvalidIntrinsicsAndPoses) {
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d lower = I;
  lower(1, 0) = 0.5;
  EXPECT_THROW(Camera(lower, I, Eigen::Vector3d::Zero()), std::invalid_argument);
  EXPECT_THROW(Camera(intrinsics(-1.0, 1.0, 0.0, 0.0, 0.0), I, Eigen::Vector3d::Zero()), std::invalid_argument);
  Eigen::Matrix3d reflect = I;
  reflect(2, 2) = -1.0;
  EXPECT_THROW(Camera(I, reflect, Eigen::Vector3d::Zero()), std::invalid_argument);
  EXPECT_THROW(Camera(I, 1.1 * I, Eigen::Vector3d::Zero()), std::invalid_argument);
}

TEST(WarpPixel, IdentityRig) {
  const Camera cam;
  const WarpedPixel w = warp_pixel({2.0, 3.0}, 5.0, cam, cam, 10, 10);
  EXPECT_TRUE(w.valid);
  EXPECT_NEAR(w.position.x(), 2.0, 1e-12);
  EXPECT_NEAR(w.position.y(), 3.0, 1e-12);
}

TEST(WarpPixel, PrincipalRayInvariantToForwardTranslation) {
  const Camera ref;
  const Camera src(Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.0, 0.0, 2.5));
  const WarpedPixel w = warp_pixel({0.0, 0.0}, 1.0, ref, src, 4, 4);
  EXPECT_TRUE(w.valid);
  EXPECT_NEAR(w.position.x(), 0.0, 1e-12);
  EXPECT_NEAR(w.position.y(), 0.0, 1e-12);
}

TEST(WarpPixel, IdentityForEveryDepth) {
  const Camera cam(intrinsics(40.0, 42.0, 0.5, 20.0, 15.0), Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
  for (double d : {1e-3, 0.5, 2.0, 37.0, 1e4}) {
    for (double x : {0.0, 7.25, 39.0}) {
      for (double y : {0.0, 11.5, 29.0}) {
        const WarpedPixel w = warp_pixel({x, y}, d, cam, cam, 40, 30);
        EXPECT_TRUE(w.valid) << x << " " << y << " " << d;
        EXPECT_NEAR(w.position.x(), x, 1e-9);
        EXPECT_NEAR(w.position.y(), y, 1e-9);
      }
    }
  }
}

TEST(WarpPixel, MatchesProjectionOracleOnRandomRigs) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ux(0.0, 31.0), uy(0.0, 23.0), ud(2.0, 6.0);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Rig rig = random_rig(seed);
    for (int k = 0; k < 10; ++k) {
      const Eigen::Vector2d p(ux(rng), uy(rng));
      const double d = ud(rng);
      const Eigen::Vector3d expect = project_oracle(p, d, rig);
      const WarpedPixel w = warp_pixel(p, d, rig.ref, rig.src, 1000, 1000);
      ASSERT_GT(expect.z(), 0.0);
      EXPECT_NEAR(w.position.x(), expect.x(), 1e-5);
      EXPECT_NEAR(w.position.y(), expect.y(), 1e-5);
    }
  }
}

TEST(WarpPixel, InvalidBehindCameraOrOutside) {
  const Camera ref;
  const Camera behind(Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.0, 0.0, -3.0));
  EXPECT_FALSE(warp_pixel({0.0, 0.0}, 1.0, ref, behind, 4, 4).valid);
  const Camera shifted(Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity(), Eigen::Vector3d(10.0, 0.0, 0.0));
  EXPECT_FALSE(warp_pixel({0.0, 0.0}, 1.0, ref, shifted, 4, 4).valid);
  EXPECT_THROW(warp_pixel({0.0, 0.0}, 0.0, ref, ref, 4, 4), std::invalid_argument);
}

TEST(WarpPixel, MaskMonotoneInSourceBounds) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ux(0.0, 31.0), uy(0.0, 23.0), ud(0.5, 8.0);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Rig rig = random_rig(seed);
    for (int k = 0; k < 50; ++k) {
      const Eigen::Vector2d p(ux(rng), uy(rng));
      const double d = ud(rng);
      bool previous = false;
      for (std::size_t size = 4; size <= 64; size += 4) {
        const bool valid = warp_pixel(p, d, rig.ref, rig.src, size, size * 3 / 4).valid;
        EXPECT_TRUE(valid || !previous);
        previous = valid;
      }
    }
  }
}

TEST(Hypotheses, Examples) {
  const auto mid = generate_hypotheses<double>(1.0, 3.0, 1, HypothesisSpacing::linear);
  EXPECT_DOUBLE_EQ(mid.values[0], 2.0);
  const auto ends = generate_hypotheses<double>(1.0, 3.0, 2, HypothesisSpacing::linear);
  EXPECT_DOUBLE_EQ(ends.values[0], 1.0);
  EXPECT_DOUBLE_EQ(ends.values[1], 3.0);
  const auto inv = generate_hypotheses<double>(1.0, 2.0, 3, HypothesisSpacing::inverse_depth);
  EXPECT_NEAR(inv.values[0], 1.0, 1e-12);
  EXPECT_NEAR(inv.values[1], 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(inv.values[2], 2.0, 1e-12);
}

TEST(Hypotheses, InverseUniformAndIncreasing) {
  const auto h = generate_hypotheses<float>(2.0, 6.0, 16, HypothesisSpacing::inverse_depth);
  h.validate();
  EXPECT_FLOAT_EQ(h.values[0], 2.0f);
  EXPECT_FLOAT_EQ(h.values[15], 6.0f);
  const double step = (1.0 / 6.0 - 1.0 / 2.0) / 15.0;
  for (std::size_t j = 1; j < 16; ++j) EXPECT_NEAR(1.0 / h.values[j] - 1.0 / h.values[j - 1], step, 1e-6);
}

TEST(Hypotheses, Errors) {
  EXPECT_THROW(generate_hypotheses<double>(0.0, 1.0, 3, HypothesisSpacing::linear), std::invalid_argument);
  EXPECT_THROW(generate_hypotheses<double>(3.0, 1.0, 3, HypothesisSpacing::linear), std::invalid_argument);
  EXPECT_THROW(generate_hypotheses<double>(1.0, 3.0, 0, HypothesisSpacing::linear), std::invalid_argument);
  DepthHypotheses<double> bad{Tensor<double>::from({3}, {1.0, 1.0, 2.0})};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  DepthHypotheses<double> negative{Tensor<double>::from({2}, {-1.0, 2.0})};
  EXPECT_THROW(negative.validate(), std::invalid_argument);
}

TEST(Hypotheses, RecenterStaysInRangeAndCentred) {
  Tensor<double> center = Tensor<double>::from({1, 3}, {2.0, 3.0, 6.0});
  const auto h = recenter_hypotheses(center, 5, 2.0, 6.0, 0.1);
  h.validate();
  ASSERT_EQ(h.values.shape(), (Shape{1, 3, 5}));
  for (std::size_t i = 0; i < 3; ++i) {
    const double lo = 1.0 / h.values.at(0, i, 4), hi = 1.0 / h.values.at(0, i, 0);
    EXPECT_NEAR(hi - lo, 0.1, 1e-12);
    EXPECT_GE(lo, 1.0 / 6.0 - 1e-12);
    EXPECT_LE(hi, 0.5 + 1e-12);
  }
  EXPECT_NEAR(1.0 / h.values.at(0, 1, 2), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(h.values.at(0, 0, 0), 2.0, 1e-12);
  EXPECT_NEAR(h.values.at(0, 2, 4), 6.0, 1e-12);
}

TEST(WarpFeatureVolume, IdentityRigRepeatsFeatures) {
  const Tensor<double> f = oracle::random_tensor({5, 6, 3}, 1);
  CameraView<double> src{Camera(), Var<double>(f)};
  const auto hyps = generate_hypotheses<double>(1.0, 4.0, 4, HypothesisSpacing::inverse_depth);
  const WarpedVolume<double> w = warp_feature_volume(src, hyps, Camera(), 5, 6);
  ASSERT_EQ(w.values.shape(), (Shape{5, 6, 4, 3}));
  for (std::size_t y = 0; y < 5; ++y) {
    for (std::size_t x = 0; x < 6; ++x) {
      for (std::size_t d = 0; d < 4; ++d) {
        EXPECT_TRUE(w.mask[(y * 6 + x) * 4 + d]);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(w.values.value().at(y, x, d, c), f.at(y, x, c), 1e-12);
      }
    }
  }
}

TEST(WarpFeatureVolume, ConstantFeaturesStayConstantWhereValid) {
  const Rig rig = random_rig(3);
  CameraView<float> src{rig.src, Var<float>(Tensor<float>({24, 32, 2}, 1.75f))};
  const auto hyps = generate_hypotheses<float>(2.0, 6.0, 8, HypothesisSpacing::inverse_depth);
  const WarpedVolume<float> w = warp_feature_volume(src, hyps, rig.ref, 24, 32);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < w.mask.size(); ++i) {
    const float expect = w.mask[i] ? 1.75f : 0.0f;
    valid += w.mask[i];
    EXPECT_NEAR(w.values.value()[2 * i], expect, 1e-5);
    EXPECT_NEAR(w.values.value()[2 * i + 1], expect, 1e-5);
  }
  EXPECT_GT(valid, w.mask.size() / 2);
}

TEST(WarpFeatureVolume, AffineRampOracle) {
  const std::size_t H = 24, W = 32;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Rig rig = random_rig(seed);
    Tensor<float> ramp({H, W, 1});
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) ramp.at(y, x, 0) = static_cast<float>(0.25 * x - 0.5 * y + 3.0);
    }
    CameraView<float> src{rig.src, Var<float>(ramp)};
    const auto hyps = generate_hypotheses<float>(2.0, 6.0, 6, HypothesisSpacing::inverse_depth);
    const WarpedVolume<float> w = warp_feature_volume(src, hyps, rig.ref, H, W);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t j = 0; j < 6; ++j) {
          const std::size_t i = (y * W + x) * 6 + j;
          const Eigen::Vector3d q = project_oracle({double(x), double(y)}, hyps.values[j], rig);
          const bool inside = q.x() >= 0.0 && q.y() >= 0.0 && q.x() <= W - 1.0 && q.y() <= H - 1.0;
          if (!w.mask[i]) {
            EXPECT_EQ(w.values.value()[i], 0.0f);
            continue;
          }
          EXPECT_TRUE(inside);
          EXPECT_NEAR(w.values.value()[i], 0.25 * q.x() - 0.5 * q.y() + 3.0, 1e-4);
        }
      }
    }
  }
}

TEST(WarpFeatureVolume, GradientWithRespectToDepth) {
  const Rig base = random_rig(7);
  const Rig rig{Camera(intrinsics(30.0, 30.0, 0.0, 2.0, 1.5), base.ref.R(), base.ref.t()), base.src};
  const Tensor<double> f = oracle::random_tensor({24, 32, 2}, 2);
  CameraView<double> src{rig.src, Var<double>(f)};
  Tensor<double> depths({4, 5, 3});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ud(2.5, 5.5);
  for (double& v : depths.data()) v = ud(rng);
  auto fn = [&](const Var<double>& d) { return warp_feature_volume(src, d, rig.ref).values; };
  const WarpedVolume<double> w = warp_feature_volume(src, Var<double>(depths), rig.ref);
  for (std::uint8_t m : w.mask) ASSERT_TRUE(m);
  const GradCheckReport r = check_input_gradient(fn, depths, 1e-5);
  EXPECT_LE(r.max_rel_error, 1e-3) << r.max_abs_error;
}

TEST(WarpFeatureVolume, MaskMonotoneWhenSourceGrows) {
  const Rig rig = random_rig(11);
  const auto hyps = generate_hypotheses<float>(1.0, 8.0, 8, HypothesisSpacing::inverse_depth);
  CameraView<float> small{rig.src, Var<float>(Tensor<float>({16, 20, 1}, 1.0f))};
  CameraView<float> large{rig.src, Var<float>(Tensor<float>({30, 40, 1}, 1.0f))};
  const auto a = warp_feature_volume(small, hyps, rig.ref, 24, 32);
  const auto b = warp_feature_volume(large, hyps, rig.ref, 24, 32);
  std::size_t gained = 0;
  for (std::size_t i = 0; i < a.mask.size(); ++i) {
    if (a.mask[i]) {
      EXPECT_TRUE(b.mask[i]);
    }
    gained += !a.mask[i] && b.mask[i];
  }
  EXPECT_GT(gained, 0u);
}
