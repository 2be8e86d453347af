#include "costformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace costformer {

namespace {

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) for strided reductions.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& a, Fwd fwd, Deriv deriv) {
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = fwd(x[i]);
  return Var<T>::make_result(std::move(y), {&a}, [deriv](Node<T>& self) {
    const Tensor<T>& x = self.input(0).value;
    Tensor<T>& g = self.input(0).grad_buffer();
    for (std::size_t i = 0; i < x.numel(); ++i) g[i] += self.grad[i] * deriv(x[i], self.value[i]);
  });
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  return Var<T>::make_result(std::move(y), {&a, &b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!self.input_needs_grad(k)) continue;
      Tensor<T>& g = self.input(k).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  return Var<T>::make_result(std::move(y), {&a, &b}, [](Node<T>& self) {
    if (self.input_needs_grad(0)) {
      Tensor<T>& g = self.input(0).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (self.input_needs_grad(1)) {
      Tensor<T>& g = self.input(1).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  return Var<T>::make_result(std::move(y), {&a, &b}, [](Node<T>& self) {
    const Tensor<T>& av = self.input(0).value;
    const Tensor<T>& bv = self.input(1).value;
    if (self.input_needs_grad(0)) {
      Tensor<T>& g = self.input(0).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (self.input_needs_grad(1)) {
      Tensor<T>& g = self.input(1).grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_constant(const Var<T>& a, const Tensor<T>& c) {
  require_same_shape("add_constant", a.shape(), c.shape());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += c[i];
  return Var<T>::make_result(std::move(y), {&a}, [](Node<T>& self) {
    Tensor<T>& g = self.input(0).grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  return unary(
      a, [](T x) { return static_cast<T>(gelu_value(x)); },
      [](T x, T) { return static_cast<T>(gelu_derivative(x)); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> abs_value(const Var<T>& a) {
  return unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> reciprocal(const Var<T>& a) {
  return unary(a, [](T x) { return T(1) / x; }, [](T, T y) { return -y * y; });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> y = a.value().reshaped(std::move(shape));
  return Var<T>::make_result(std::move(y), {&a}, [](Node<T>& self) {
    Tensor<T>& g = self.input(0).grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, const RowIndex& rows, Shape out_shape) {
  const Tensor<T>& x = a.value();
  const std::size_t width = x.shape().back();
  const auto n_in = static_cast<std::int64_t>(x.numel() / width);
  if (shape_numel(out_shape) != rows->size() * width) {
    throw std::invalid_argument("gather_rows: output shape " + shape_string(out_shape) + " inconsistent with " +
                                std::to_string(rows->size()) + " rows of width " + std::to_string(width));
  }
  Tensor<T> y(std::move(out_shape));
  for (std::size_t r = 0; r < rows->size(); ++r) {
    const std::int64_t src = (*rows)[r];
    if (src < 0) continue;
    if (src >= n_in) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(x.data().begin() + src * width, width, y.data().begin() + r * width);
  }
  return Var<T>::make_result(std::move(y), {&a}, [rows, width](Node<T>& self) {
    Tensor<T>& g = self.input(0).grad_buffer();
    for (std::size_t r = 0; r < rows->size(); ++r) {
      const std::int64_t src = (*rows)[r];
      if (src < 0) continue;
      T* dst = g.data().data() + src * width;
      const T* up = self.grad.data().data() + r * width;
      for (std::size_t c = 0; c < width; ++c) dst[c] += up[c];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (T v : a.value().data()) total += v;
  return Var<T>::make_result(Tensor<T>({1}, total), {&a}, [](Node<T>& self) {
    Tensor<T>& g = self.input(0).grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& a, const Tensor<T>& weights) {
  require_same_shape("weighted_sum", a.shape(), weights.shape());
  T total = 0;
  for (std::size_t i = 0; i < weights.numel(); ++i) total += a.value()[i] * weights[i];
  return Var<T>::make_result(Tensor<T>({1}, total), {&a}, [weights](Node<T>& self) {
    Tensor<T>& g = self.input(0).grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const LinearParams<T>& p) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& w = p.weight.value();
  if (w.rank() != 2) throw std::invalid_argument("linear: weight must be rank 2");
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  if (xv.shape().back() != in) {
    throw std::invalid_argument("linear: input extent " + std::to_string(xv.shape().back()) + " != in_dim " +
                                std::to_string(in));
  }
  if (p.has_bias() && p.bias.numel() != out) throw std::invalid_argument("linear: bias extent mismatch");
  const std::size_t rows = xv.numel() / in;
  Shape out_shape = xv.shape();
  out_shape.back() = out;
  Tensor<T> y(out_shape);
  const T* xp = xv.data().data();
  const T* wp = w.data().data();
  T* yp = y.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = yp + r * out;
    if (p.has_bias()) std::copy_n(p.bias.value().data().data(), out, yr);
    const T* xr = xp + r * in;
    for (std::size_t k = 0; k < in; ++k) {
      const T xk = xr[k];
      if (xk == T(0)) continue;
      const T* wk = wp + k * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xk * wk[j];
    }
  }
  return Var<T>::make_result(std::move(y), {&x, &p.weight, &p.bias}, [rows, in, out](Node<T>& self) {
    const T* gy = self.grad.data().data();
    if (self.input_needs_grad(0)) {
      const T* wp = self.input(1).value.data().data();
      T* gx = self.input(0).grad_buffer().data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = gy + r * out;
        T* gxr = gx + r * in;
        for (std::size_t k = 0; k < in; ++k) {
          const T* wk = wp + k * out;
          T acc = 0;
          for (std::size_t j = 0; j < out; ++j) acc += gr[j] * wk[j];
          gxr[k] += acc;
        }
      }
    }
    if (self.input_needs_grad(1)) {
      const T* xp = self.input(0).value.data().data();
      T* gw = self.input(1).grad_buffer().data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = gy + r * out;
        const T* xr = xp + r * in;
        for (std::size_t k = 0; k < in; ++k) {
          const T xk = xr[k];
          if (xk == T(0)) continue;
          T* gwk = gw + k * out;
          for (std::size_t j = 0; j < out; ++j) gwk[j] += xk * gr[j];
        }
      }
    }
    if (self.input_needs_grad(2)) {
      T* gb = self.input(2).grad_buffer().data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < out; ++j) gb[j] += gy[r * out + j];
      }
    }
  });
}

template <typename T>
Var<T> mlp_gelu(const Var<T>& x, const LinearParams<T>& fc1, const LinearParams<T>& fc2) {
  if (fc2.in_dim() != fc1.out_dim()) throw std::invalid_argument("mlp_gelu: fc2.in_dim != fc1.out_dim");
  return linear(gelu(linear(x, fc1)), fc2);
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t axis) {
  const Tensor<T>& xv = x.value();
  if (axis >= xv.rank()) throw std::invalid_argument("layer_norm: invalid axis");
  const AxisSplit s = split_axis(xv.shape(), axis);
  if (gamma.numel() != s.extent || beta.numel() != s.extent) {
    throw std::invalid_argument("layer_norm: gamma/beta extent " + std::to_string(gamma.numel()) +
                                " does not match axis extent " + std::to_string(s.extent));
  }
  const T* gp = gamma.value().data().data();
  const T* bp = beta.value().data().data();
  Tensor<T> y(xv.shape());
  auto normalized = std::make_shared<std::vector<T>>(xv.numel());
  auto rstd = std::make_shared<std::vector<T>>(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mean = 0;
      for (std::size_t e = 0; e < s.extent; ++e) mean += xv[base + e * s.inner];
      mean /= static_cast<T>(s.extent);
      T var = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T d = xv[base + e * s.inner] - mean;
        var += d * d;
      }
      var /= static_cast<T>(s.extent);
      const T r = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
      (*rstd)[o * s.inner + in] = r;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t idx = base + e * s.inner;
        const T xh = (xv[idx] - mean) * r;
        (*normalized)[idx] = xh;
        y[idx] = gp[e] * xh + bp[e];
      }
    }
  }
  return Var<T>::make_result(std::move(y), {&x, &gamma, &beta}, [s, normalized, rstd](Node<T>& self) {
    const T* gp = self.input(1).value.data().data();
    const std::vector<T>& xh = *normalized;
    const Tensor<T>& gy = self.grad;
    T* gx = self.input_needs_grad(0) ? self.input(0).grad_buffer().data().data() : nullptr;
    T* gg = self.input_needs_grad(1) ? self.input(1).grad_buffer().data().data() : nullptr;
    T* gb = self.input_needs_grad(2) ? self.input(2).grad_buffer().data().data() : nullptr;
    const T n = static_cast<T>(s.extent);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T mean_d = 0;
        T mean_dx = 0;
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t idx = base + e * s.inner;
          const T d = gy[idx] * gp[e];
          mean_d += d;
          mean_dx += d * xh[idx];
          if (gg) gg[e] += gy[idx] * xh[idx];
          if (gb) gb[e] += gy[idx];
        }
        if (!gx) continue;
        mean_d /= n;
        mean_dx /= n;
        const T r = (*rstd)[o * s.inner + in];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t idx = base + e * s.inner;
          gx[idx] += r * (gy[idx] * gp[e] - mean_d - xh[idx] * mean_dx);
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const LayerNormParams<T>& p) {
  return layer_norm(x, p.gamma, p.beta, x.value().rank() - 1);
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const Tensor<T>& xv = x.value();
  if (axis >= xv.rank()) throw std::invalid_argument("softmax: invalid axis");
  for (T v : xv.data()) {
    if (std::isnan(v)) throw std::invalid_argument("softmax: NaN in input");
  }
  const AxisSplit s = split_axis(xv.shape(), axis);
  Tensor<T> y(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, xv[base + e * s.inner]);
      T total = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(xv[base + e * s.inner] - mx);
        y[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) y[base + e * s.inner] /= total;
    }
  }
  return Var<T>::make_result(std::move(y), {&x}, [s](Node<T>& self) {
    Tensor<T>& g = self.input(0).grad_buffer();
    const Tensor<T>& yv = self.value;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        T dot = 0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += yv[base + e * s.inner] * self.grad[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t idx = base + e * s.inner;
          g[idx] += yv[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

namespace {

// Neighbor indices and fractional weights of one bilinear sample.
struct BilinearCell {
  std::size_t x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double fx = 0, fy = 0;
};

bool bilinear_cell(double x, double y, std::size_t width, std::size_t height, BilinearCell& cell) {
  const double tol = kSampleBorderTolerance;
  if (!(x >= -tol && y >= -tol && x <= static_cast<double>(width - 1) + tol &&
        y <= static_cast<double>(height - 1) + tol)) {
    return false;
  }
  auto axis = [](double v, std::size_t extent, std::size_t& i0, std::size_t& i1, double& f) {
    v = std::clamp(v, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(v));
    if (i0 >= extent - 1) i0 = extent >= 2 ? extent - 2 : 0;
    i1 = extent >= 2 ? i0 + 1 : i0;
    f = v - static_cast<double>(i0);
  };
  axis(x, width, cell.x0, cell.x1, cell.fx);
  axis(y, height, cell.y0, cell.y1, cell.fy);
  return true;
}

}  // namespace

template <typename T>
BilinearSample<T> bilinear_sample(const Var<T>& map, const Var<T>& coords) {
  const Tensor<T>& m = map.value();
  const Tensor<T>& c = coords.value();
  if (m.rank() != 3) throw std::invalid_argument("bilinear_sample: map must be [H x W x C]");
  if (c.rank() != 2 || c.dim(1) != 2) throw std::invalid_argument("bilinear_sample: coords must be [N x 2]");
  const std::size_t height = m.dim(0), width = m.dim(1), channels = m.dim(2);
  const std::size_t n = c.dim(0);
  Tensor<T> y({n, channels});
  auto cells = std::make_shared<std::vector<BilinearCell>>(n);
  std::vector<std::uint8_t> valid(n, 0);
  const T* mp = m.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    BilinearCell& cell = (*cells)[i];
    if (!bilinear_cell(c[2 * i], c[2 * i + 1], width, height, cell)) continue;
    valid[i] = 1;
    const T fx = static_cast<T>(cell.fx), fy = static_cast<T>(cell.fy);
    const T w00 = (T(1) - fx) * (T(1) - fy), w01 = fx * (T(1) - fy), w10 = (T(1) - fx) * fy, w11 = fx * fy;
    const T* p00 = mp + (cell.y0 * width + cell.x0) * channels;
    const T* p01 = mp + (cell.y0 * width + cell.x1) * channels;
    const T* p10 = mp + (cell.y1 * width + cell.x0) * channels;
    const T* p11 = mp + (cell.y1 * width + cell.x1) * channels;
    T* out = y.data().data() + i * channels;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      out[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
    }
  }
  auto valid_shared = std::make_shared<std::vector<std::uint8_t>>(valid);
  Var<T> values = Var<T>::make_result(
      std::move(y), {&map, &coords}, [cells, valid_shared, width, channels](Node<T>& self) {
        const T* mp = self.input(0).value.data().data();
        T* gm = self.input_needs_grad(0) ? self.input(0).grad_buffer().data().data() : nullptr;
        T* gc = self.input_needs_grad(1) ? self.input(1).grad_buffer().data().data() : nullptr;
        for (std::size_t i = 0; i < cells->size(); ++i) {
          if (!(*valid_shared)[i]) continue;
          const BilinearCell& cell = (*cells)[i];
          const T fx = static_cast<T>(cell.fx), fy = static_cast<T>(cell.fy);
          const std::size_t o00 = (cell.y0 * width + cell.x0) * channels;
          const std::size_t o01 = (cell.y0 * width + cell.x1) * channels;
          const std::size_t o10 = (cell.y1 * width + cell.x0) * channels;
          const std::size_t o11 = (cell.y1 * width + cell.x1) * channels;
          const T* up = self.grad.data().data() + i * channels;
          if (gm) {
            const T w00 = (T(1) - fx) * (T(1) - fy), w01 = fx * (T(1) - fy), w10 = (T(1) - fx) * fy, w11 = fx * fy;
            for (std::size_t ch = 0; ch < channels; ++ch) {
              gm[o00 + ch] += w00 * up[ch];
              gm[o01 + ch] += w01 * up[ch];
              gm[o10 + ch] += w10 * up[ch];
              gm[o11 + ch] += w11 * up[ch];
            }
          }
          if (gc) {
            T dx = 0, dy = 0;
            for (std::size_t ch = 0; ch < channels; ++ch) {
              const T v00 = mp[o00 + ch], v01 = mp[o01 + ch], v10 = mp[o10 + ch], v11 = mp[o11 + ch];
              dx += up[ch] * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
              dy += up[ch] * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
            }
            gc[2 * i] += dx;
            gc[2 * i + 1] += dy;
          }
        }
      });
  return {std::move(values), std::move(valid)};
}

#define COSTFORMER_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> scale(const Var<T>&, T);                                                             \
  template Var<T> add_constant(const Var<T>&, const Tensor<T>&);                                       \
  template Var<T> relu(const Var<T>&);                                                                 \
  template Var<T> gelu(const Var<T>&);                                                                 \
  template Var<T> sigmoid(const Var<T>&);                                                              \
  template Var<T> abs_value(const Var<T>&);                                                            \
  template Var<T> reciprocal(const Var<T>&);                                                           \
  template Var<T> reshape(const Var<T>&, Shape);                                                       \
  template Var<T> gather_rows(const Var<T>&, const RowIndex&, Shape);                                  \
  template Var<T> sum(const Var<T>&);                                                                  \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);                                       \
  template Var<T> linear(const Var<T>&, const LinearParams<T>&);                                       \
  template Var<T> mlp_gelu(const Var<T>&, const LinearParams<T>&, const LinearParams<T>&);             \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t);                \
  template Var<T> layer_norm(const Var<T>&, const LayerNormParams<T>&);                                \
  template Var<T> softmax(const Var<T>&, std::size_t);                                                 \
  template BilinearSample<T> bilinear_sample(const Var<T>&, const Var<T>&);

COSTFORMER_INSTANTIATE_OPS(float)
COSTFORMER_INSTANTIATE_OPS(double)

}  // namespace costformer
