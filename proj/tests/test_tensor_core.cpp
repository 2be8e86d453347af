#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "costformer/gradcheck.hpp"
#include "costformer/ops.hpp"
#include "costformer/params.hpp"
#include "costformer/rdact.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"

using namespace costformer;

namespace {

LinearParams<double> make_lp(const Tensor<double>& w, const Tensor<double>& b = {}) {
  LinearParams<double> p;
  p.weight = Var<double>(w, true);
  if (!b.empty()) p.bias = Var<double>(b, true);
  return p;
}

Tensor<double> identity(std::size_t n) {
  Tensor<double> t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

}  // namespace

TEST(Tensor, ShapeAndIndexing) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  t.at(1, 2, 3) = 5.0f;
  EXPECT_EQ(t[23], 5.0f);
  EXPECT_THROW(t.at(2, 0, 0), std::out_of_range);
  EXPECT_THROW(Tensor<float>({2, 0}), std::invalid_argument);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), std::invalid_argument);
  Tensor<float> r = t.reshaped({6, 4});
  EXPECT_EQ(r.at(5, 3), 5.0f);
  EXPECT_THROW(t.reshape({5, 5}), std::invalid_argument);
}

TEST(Softmax, Examples) {
  Var<double> a(Tensor<double>::from({2}, {2.0, 2.0}));
  EXPECT_DOUBLE_EQ(softmax(a, 0).value()[0], 0.5);
  EXPECT_DOUBLE_EQ(softmax(a, 0).value()[1], 0.5);
  Var<float> b(Tensor<float>::from({1}, {7.3f}));
  EXPECT_EQ(softmax(b, 0).value()[0], 1.0f);

  Var<float> c(Tensor<float>::from({3}, {1.0f, 2.0f, 3.0f}));
  const Tensor<float> y = softmax(c, 0).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], std::exp(i + 1.0) / z, 1e-6);
}

TEST(Softmax, Errors) {
  Var<double> a(Tensor<double>({2, 3}));
  EXPECT_THROW(softmax(a, 2), std::invalid_argument);
  Tensor<double> bad({2});
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(softmax(Var<double>(bad), 0), std::invalid_argument);
}

TEST(Softmax, SumsToOneAlongEveryAxis) {
  const Tensor<double> x = oracle::random_tensor({3, 4, 5}, 11, 30.0);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const Tensor<float> y = softmax(Var<float>(x.cast<float>()), axis).value();
    const std::size_t n = x.dim(axis);
    const std::size_t inner = axis == 2 ? 1 : (axis == 1 ? 5 : 20);
    for (std::size_t outer = 0; outer < 60 / (n * inner); ++outer) {
      for (std::size_t in = 0; in < inner; ++in) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const float v = y[(outer * n + k) * inner + in];
          EXPECT_GT(v, 0.0f);
          EXPECT_LE(v, 1.0f);
          s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-5);
      }
    }
  }
}

TEST(LayerNorm, Examples) {
  LayerNormParams<double> p{Var<double>(Tensor<double>({3}, 1.0)), Var<double>(Tensor<double>({3}, 0.0))};
  const Tensor<double> y = layer_norm(Var<double>(Tensor<double>({1, 3}, 5.0)), p).value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);

  LayerNormParams<double> q{Var<double>(Tensor<double>({2}, 1.0)), Var<double>(Tensor<double>({2}, 0.0))};
  const Tensor<double> z = layer_norm(Var<double>(Tensor<double>::from({2}, {1.0, 3.0})), q).value();
  EXPECT_NEAR(z[0], -1.0, 1e-5);
  EXPECT_NEAR(z[1], 1.0, 1e-5);
}

TEST(LayerNorm, MomentsOnRandomSlices) {
  const Tensor<double> x = oracle::random_tensor({6, 16}, 3, 4.0);
  LayerNormParams<float> p{Var<float>(Tensor<float>({16}, 1.0f)), Var<float>(Tensor<float>({16}, 0.0f))};
  const Tensor<float> y = layer_norm(Var<float>(x.cast<float>()), p).value();
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 16; ++c) mean += y.at(r, c);
    mean /= 16.0;
    for (std::size_t c = 0; c < 16; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
    var /= 16.0;
    EXPECT_LE(std::abs(mean), 1e-5);
    EXPECT_LE(std::abs(var - 1.0), 1e-3);
  }
}

TEST(LayerNorm, GeneralAxisMatchesOracle) {
  const Tensor<double> x = oracle::random_tensor({3, 4, 2}, 8);
  const Tensor<double> g = oracle::random_tensor({4}, 9), b = oracle::random_tensor({4}, 10);
  const Tensor<double> y = layer_norm(Var<double>(x), Var<double>(g), Var<double>(b), 1).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 4; ++j) mean += x.at(i, j, k) / 4.0;
      for (std::size_t j = 0; j < 4; ++j) var += (x.at(i, j, k) - mean) * (x.at(i, j, k) - mean) / 4.0;
      for (std::size_t j = 0; j < 4; ++j) {
        const double expect = (x.at(i, j, k) - mean) / std::sqrt(var + kLayerNormEps) * g[j] + b[j];
        EXPECT_NEAR(y.at(i, j, k), expect, 1e-12);
      }
    }
  }
}

TEST(LayerNorm, ShapeMismatchThrows) {
  LayerNormParams<double> p{Var<double>(Tensor<double>({3}, 1.0)), Var<double>(Tensor<double>({3}))};
  EXPECT_THROW(layer_norm(Var<double>(Tensor<double>({2, 4})), p), std::invalid_argument);
}

TEST(Linear, Examples) {
  const Tensor<double> x = oracle::random_tensor({5, 3}, 1);
  EXPECT_EQ(linear(Var<double>(x), make_lp(identity(3), Tensor<double>({3}))).value(), x);

  const Tensor<double> bias = Tensor<double>::from({2}, {0.5, -2.0});
  const Tensor<double> y = linear(Var<double>(x), make_lp(Tensor<double>({3, 2}), bias)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_EQ(y.at(r, 0), 0.5);
    EXPECT_EQ(y.at(r, 1), -2.0);
  }
}

TEST(Linear, MatchesLoopOracle) {
  const Tensor<double> x = oracle::random_tensor({3, 4}, 2), w = oracle::random_tensor({4, 2}, 3);
  const Tensor<float> y = linear(Var<float>(x.cast<float>()), LinearParams<float>{Var<float>(w.cast<float>()), {}}).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += x.at(i, k) * w.at(k, j);
      EXPECT_NEAR(y.at(i, j), acc, 1e-6);
    }
  }
}

TEST(Linear, IsLinearWithoutBias) {
  const Tensor<double> x = oracle::random_tensor({4, 6}, 5), w = oracle::random_tensor({6, 3}, 6);
  const LinearParams<double> p = make_lp(w);
  const Tensor<double> y = linear(Var<double>(x), p).value();
  const Tensor<double> y3 = linear(scale(Var<double>(x), 3.0), p).value();
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y3[i], 3.0 * y[i], 1e-6);
}

TEST(Linear, DimensionMismatchThrows) {
  EXPECT_THROW(linear(Var<double>(Tensor<double>({2, 3})), make_lp(Tensor<double>({4, 2}))), std::invalid_argument);
}

TEST(MlpGelu, Examples) {
  const LinearParams<double> fc1 = make_lp(oracle::random_tensor({3, 6}, 1), Tensor<double>({6}));
  const LinearParams<double> fc2 = make_lp(oracle::random_tensor({6, 3}, 2), Tensor<double>({3}));
  const Tensor<double> zero = mlp_gelu(Var<double>(Tensor<double>({2, 3})), fc1, fc2).value();
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);

  const Tensor<double> x = oracle::random_tensor({4, 3}, 3, 2.0);
  const Tensor<double> y = mlp_gelu(Var<double>(x), make_lp(identity(3)), make_lp(identity(3))).value();
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], oracle::gelu(x[i]), 1e-12);

  const double phi1 = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  EXPECT_NEAR(gelu(Var<float>(Tensor<float>({1}, 1.0f))).value()[0], phi1, 1e-6);
  EXPECT_THROW(mlp_gelu(Var<double>(x), make_lp(identity(3)), make_lp(identity(4))), std::invalid_argument);
}

TEST(Bilinear, Examples) {
  const Tensor<double> map = oracle::random_tensor({4, 5, 2}, 4);
  Tensor<double> coords = Tensor<double>::from({2, 2}, {3.0, 2.0, 0.0, 3.0});
  BilinearSample<double> s = bilinear_sample(Var<double>(map), Var<double>(coords));
  EXPECT_EQ(s.values.value().at(0, 1), map.at(2, 3, 1));
  EXPECT_EQ(s.values.value().at(1, 0), map.at(3, 0, 0));

  const Tensor<double> flat({3, 3, 1}, 2.5);
  BilinearSample<double> m = bilinear_sample(Var<double>(flat), Var<double>(Tensor<double>::from({1, 2}, {0.5, 1.5})));
  EXPECT_NEAR(m.values.value()[0], 2.5, 1e-15);
}

TEST(Bilinear, ReproducesAffineRamp) {
  const std::size_t H = 6, W = 7;
  Tensor<float> ramp({H, W, 1});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) ramp.at(y, x, 0) = static_cast<float>(0.3 * x - 0.7 * y);
  }
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(0.0, W - 1.0), uy(0.0, H - 1.0);
  Tensor<float> coords({50, 2});
  for (std::size_t i = 0; i < 50; ++i) {
    coords.at(i, 0) = static_cast<float>(ux(rng));
    coords.at(i, 1) = static_cast<float>(uy(rng));
  }
  coords.at(0, 0) = W - 1.0f;
  coords.at(0, 1) = H - 1.0f;
  BilinearSample<float> s = bilinear_sample(Var<float>(ramp), Var<float>(coords));
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_TRUE(s.valid[i]);
    EXPECT_NEAR(s.values.value()[i], 0.3 * coords.at(i, 0) - 0.7 * coords.at(i, 1), 1e-5);
  }
}

TEST(Bilinear, OutOfBoundsIsZeroAndInvalid) {
  const Tensor<double> map({3, 3, 2}, 1.0);
  Tensor<double> coords = Tensor<double>::from({4, 2}, {-0.01, 1.0, 1.0, 2.0001, 3.0, 0.0, 1.0, 1.0});
  BilinearSample<double> s = bilinear_sample(Var<double>(map), Var<double>(coords));
  for (int i = 0; i < 3; ++i) {
    EXPECT_FALSE(s.valid[i]);
    EXPECT_EQ(s.values.value().at(i, 0), 0.0);
  }
  EXPECT_TRUE(s.valid[3]);
}

TEST(Bilinear, RoundoffAtTheBorderSnapsOntoIt) {
  const Tensor<double> map = oracle::random_tensor({3, 4, 2}, 13);
  const Tensor<double> coords = Tensor<double>::from({2, 2}, {-3e-15, 2.0 + 4e-15, 3.0 + 1e-9, -1e-9});
  const BilinearSample<double> s = bilinear_sample(Var<double>(map), Var<double>(coords));
  EXPECT_TRUE(s.valid[0] && s.valid[1]);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(s.values.value().at(0, c), map.at(2, 0, c));
    EXPECT_EQ(s.values.value().at(1, c), map.at(0, 3, c));
  }
  const double out = 2.0 * kSampleBorderTolerance;
  EXPECT_FALSE(bilinear_sample(Var<double>(map), Var<double>(Tensor<double>::from({1, 2}, {-out, 1.0}))).valid[0]);
}

TEST(Bilinear, IntegerCoordinatesReproduceMap) {
  const Tensor<double> map = oracle::random_tensor({5, 4, 3}, 12);
  Tensor<double> coords({20, 2});
  for (std::size_t y = 0; y < 5; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      coords.at(y * 4 + x, 0) = static_cast<double>(x);
      coords.at(y * 4 + x, 1) = static_cast<double>(y);
    }
  }
  EXPECT_EQ(bilinear_sample(Var<double>(map), Var<double>(coords)).values.value().values(), map.values());
}

TEST(FiniteDiff, Examples) {
  const Tensor<double> x = Tensor<double>::from({2}, {1.0, 2.0});
  const Tensor<double> g = finite_diff_grad(
      [](const Tensor<double>& t) {
        double s = 0.0;
        for (double v : t.data()) s += v;
        return s;
      },
      x, 1e-3);
  EXPECT_NEAR(g[0], 1.0, 1e-9);
  EXPECT_NEAR(g[1], 1.0, 1e-9);
  const Tensor<double> g2 = finite_diff_grad(
      [](const Tensor<double>& t) {
        double s = 0.0;
        for (double v : t.data()) s += v * v;
        return s;
      },
      x, 1e-3);
  EXPECT_NEAR(g2[0], 2.0, 1e-6);
  EXPECT_NEAR(g2[1], 4.0, 1e-6);
  EXPECT_THROW(finite_diff_grad([](const Tensor<double>&) { return std::numeric_limits<double>::infinity(); }, x, 1e-3),
               std::runtime_error);
}

TEST(FiniteDiff, DatlLayerGradient) {
  ParamStore<double> store(4);
  DatlParams<double> p = make_datl_params(store, "l", 4, 2, 2, {2, 2, 2}, AttentionVariant::depth_spatial);
  for (auto& [name, var] : store.entries()) {
    const Tensor<double> noise = oracle::random_tensor(var.shape(), fnv1a(name), 0.3);
    for (std::size_t i = 0; i < var.numel(); ++i) var.mutable_value()[i] += noise[i];
  }
  const Tensor<double> x = oracle::random_tensor({3, 3, 2, 4}, 77);
  GradCheckReport r = check_input_gradient([&](const Var<double>& v) { return datl_forward(v, p, {2, 2, 2}); }, x);
  EXPECT_LE(r.max_rel_error, 1e-3);
}

using opcase::OpCase;

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const OpCase& c = GetParam();
  const GradCheckReport r = check_input_gradient(c.fn, opcase::op_input(c, 31));
  EXPECT_LE(r.max_rel_error, 1e-3) << c.name << " abs " << r.max_abs_error;
  EXPECT_GT(r.num_elements, 0u);
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(opcase::op_cases()),
                         [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });

TEST(OpGradientParams, LinearAndNormParameters) {
  LinearParams<double> p = make_lp(oracle::random_tensor({4, 5}, 50), oracle::random_tensor({5}, 51));
  const Var<double> x(oracle::random_tensor({3, 4}, 52));
  EXPECT_LE(check_param_gradient([&] { return linear(x, p); }, p.weight).max_rel_error, 1e-3);
  EXPECT_LE(check_param_gradient([&] { return linear(x, p); }, p.bias).max_rel_error, 1e-3);
  LayerNormParams<double> n{Var<double>(oracle::random_tensor({4}, 53), true), Var<double>(oracle::random_tensor({4}, 54), true)};
  EXPECT_LE(check_param_gradient([&] { return mul(layer_norm(x, n), layer_norm(x, n)); }, n.gamma).max_rel_error, 1e-3);
  EXPECT_LE(check_param_gradient([&] { return mul(layer_norm(x, n), layer_norm(x, n)); }, n.beta).max_rel_error, 1e-3);
}

TEST(Autograd, AccumulatesThroughSharedInputs) {
  Var<double> x(Tensor<double>::from({2}, {1.5, -2.0}), true);
  Var<double> y = sum(add(mul(x, x), x));
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
  Var<double> v(Tensor<double>({2}), true);
  EXPECT_THROW(mul(v, v).backward(), std::logic_error);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  Var<double> x(Tensor<double>({2}, 1.0), true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(mul(x, x).requires_grad());
  }
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Autograd, OutputsStayFinite) {
  const Tensor<double> x = oracle::random_tensor({4, 6}, 60, 50.0);
  Var<float> v(x.cast<float>());
  EXPECT_TRUE(softmax(v, 1).value().all_finite());
  EXPECT_TRUE(sigmoid(v).value().all_finite());
  EXPECT_TRUE(gelu(v).value().all_finite());
  LayerNormParams<float> p{Var<float>(Tensor<float>({6}, 1.0f)), Var<float>(Tensor<float>({6}))};
  EXPECT_TRUE(layer_norm(v, p).value().all_finite());
}
