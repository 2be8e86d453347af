#include "costformer/window_attention.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <tuple>

namespace costformer {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Region of a rolled coordinate q in a shifted partition: tokens of one window that come from
// different regions were not neighbors before the cyclic shift.
std::uint8_t shift_region(std::size_t q, std::size_t padded, std::size_t window, std::size_t shift) {
  if (shift == 0) return 0;
  if (q < padded - window) return 0;
  if (q < padded - shift) return 1;
  return 2;
}

std::shared_ptr<const WindowPartition> build_partition(const Extents3& grid, const WindowSpec& spec) {
  auto part = std::make_shared<WindowPartition>();
  part->grid = grid;
  for (std::size_t a = 0; a < 3; ++a) {
    if (grid[a] == 0 || spec.extents[a] == 0) throw std::invalid_argument("window partition: extents must be >= 1");
    if (grid[a] <= spec.extents[a]) {
      part->window[a] = grid[a];
      part->shift[a] = 0;
    } else {
      part->window[a] = spec.extents[a];
      part->shift[a] = spec.shift()[a];
    }
    part->padded[a] = ceil_div(grid[a], part->window[a]) * part->window[a];
  }
  const Extents3& ws = part->window;
  const Extents3& pd = part->padded;
  const Extents3& sh = part->shift;
  const Extents3 counts{pd[0] / ws[0], pd[1] / ws[1], pd[2] / ws[2]};
  part->num_windows = counts[0] * counts[1] * counts[2];
  part->tokens_per_window = ws[0] * ws[1] * ws[2];
  const std::size_t T = part->tokens_per_window;
  const std::size_t grid_tokens = grid[0] * grid[1] * grid[2];

  auto to = std::make_shared<std::vector<std::int64_t>>(part->num_windows * T, -1);
  auto from = std::make_shared<std::vector<std::int64_t>>(grid_tokens, -1);

  auto spatial = std::make_shared<AttentionLayout>();
  spatial->groups = part->num_windows;
  spatial->tokens = T;
  spatial->table_rows = bias_table_rows(spec.extents);
  spatial->relative_index = relative_position_index(ws, spec.extents);
  spatial->mask_id.assign(part->num_windows, -1);

  auto depth = std::make_shared<AttentionLayout>();
  depth->groups = part->num_windows * ws[0] * ws[1];
  depth->tokens = ws[2];
  depth->table_rows = 2 * spec.extents[2] - 1;
  depth->relative_index = relative_position_index({1, 1, ws[2]}, {1, 1, spec.extents[2]});
  depth->mask_id.assign(depth->groups, -1);

  std::vector<std::array<std::uint8_t, 3>> labels(T);
  for (std::size_t wa = 0; wa < counts[0]; ++wa) {
    for (std::size_t wb = 0; wb < counts[1]; ++wb) {
      for (std::size_t wc = 0; wc < counts[2]; ++wc) {
        const std::size_t w = (wa * counts[1] + wb) * counts[2] + wc;
        bool mixed = false;
        for (std::size_t a = 0; a < ws[0]; ++a) {
          for (std::size_t b = 0; b < ws[1]; ++b) {
            for (std::size_t c = 0; c < ws[2]; ++c) {
              const std::size_t slot = (a * ws[1] + b) * ws[2] + c;
              const Extents3 q{wa * ws[0] + a, wb * ws[1] + b, wc * ws[2] + c};
              Extents3 x{};
              bool inside = true;
              for (std::size_t ax = 0; ax < 3; ++ax) {
                x[ax] = (q[ax] + sh[ax]) % pd[ax];
                inside = inside && x[ax] < grid[ax];
                labels[slot][ax] = shift_region(q[ax], pd[ax], ws[ax], sh[ax]);
              }
              mixed = mixed || labels[slot] != labels[0];
              if (inside) {
                const std::size_t token = (x[0] * grid[1] + x[1]) * grid[2] + x[2];
                (*to)[w * T + slot] = static_cast<std::int64_t>(token);
                (*from)[token] = static_cast<std::int64_t>(w * T + slot);
              }
            }
          }
        }
        if (!mixed) continue;
        spatial->mask_id[w] = static_cast<std::int32_t>(spatial->num_masks());
        for (std::size_t i = 0; i < T; ++i) {
          for (std::size_t j = 0; j < T; ++j) spatial->blocked.push_back(labels[i] != labels[j] ? 1 : 0);
        }
        // Depth fibers share their (h, w) labels, so only the depth label can split them.
        for (std::size_t f = 0; f < ws[0] * ws[1]; ++f) {
          bool split = false;
          for (std::size_t c = 1; c < ws[2]; ++c) split = split || labels[f * ws[2] + c][2] != labels[f * ws[2]][2];
          if (!split) continue;
          depth->mask_id[w * ws[0] * ws[1] + f] = static_cast<std::int32_t>(depth->num_masks());
          for (std::size_t i = 0; i < ws[2]; ++i) {
            for (std::size_t j = 0; j < ws[2]; ++j) {
              depth->blocked.push_back(labels[f * ws[2] + i][2] != labels[f * ws[2] + j][2] ? 1 : 0);
            }
          }
        }
      }
    }
  }
  part->to_windows = std::move(to);
  part->from_windows = std::move(from);
  part->spatial = std::move(spatial);
  part->depth = std::move(depth);
  return part;
}

}  // namespace

std::size_t window_count(const Extents3& grid, const Extents3& window) {
  return ceil_div(grid[0], window[0]) * ceil_div(grid[1], window[1]) * ceil_div(grid[2], window[2]);
}

std::size_t bias_table_rows(const Extents3& window) {
  return (2 * window[0] - 1) * (2 * window[1] - 1) * (2 * window[2] - 1);
}

std::vector<std::int32_t> relative_position_index(const Extents3& window, const Extents3& table_window) {
  for (std::size_t a = 0; a < 3; ++a) {
    if (window[a] > table_window[a]) throw std::invalid_argument("relative_position_index: window exceeds table");
  }
  const std::size_t T = window[0] * window[1] * window[2];
  const std::size_t stride1 = 2 * table_window[2] - 1;
  const std::size_t stride0 = (2 * table_window[1] - 1) * stride1;
  std::vector<std::int32_t> index(T * T);
  auto coord = [&](std::size_t t) {
    return Extents3{t / (window[1] * window[2]), (t / window[2]) % window[1], t % window[2]};
  };
  for (std::size_t i = 0; i < T; ++i) {
    const Extents3 ci = coord(i);
    for (std::size_t j = 0; j < T; ++j) {
      const Extents3 cj = coord(j);
      std::size_t r = 0;
      r += (ci[0] + table_window[0] - 1 - cj[0]) * stride0;
      r += (ci[1] + table_window[1] - 1 - cj[1]) * stride1;
      r += ci[2] + table_window[2] - 1 - cj[2];
      index[i * T + j] = static_cast<std::int32_t>(r);
    }
  }
  return index;
}

std::shared_ptr<const WindowPartition> make_window_partition(const Extents3& grid, const WindowSpec& spec) {
  using Key = std::tuple<Extents3, Extents3, bool>;
  static std::mutex mutex;
  static std::map<Key, std::shared_ptr<const WindowPartition>> cache;
  const Key key{grid, spec.extents, spec.shifted};
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto part = build_partition(grid, spec);
  std::lock_guard lock(mutex);
  cache.emplace(key, part);
  return part;
}

template <typename T>
Var<T> window_partition(const Var<T>& x, const WindowPartition& partition) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[0] != partition.grid[0] || s[1] != partition.grid[1] || s[2] != partition.grid[2]) {
    throw std::invalid_argument("window_partition: tensor " + shape_string(s) + " does not match the partition grid");
  }
  return gather_rows(x, partition.to_windows, {partition.num_windows, partition.tokens_per_window, s[3]});
}

template <typename T>
Var<T> window_reverse(const Var<T>& windows, const WindowPartition& partition) {
  const std::size_t width = windows.shape().back();
  return gather_rows(windows, partition.from_windows, {partition.grid[0], partition.grid[1], partition.grid[2], width});
}

template <typename T>
Var<T> grouped_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& bias_table,
                         const std::shared_ptr<const AttentionLayout>& layout, std::size_t heads) {
  const AttentionLayout& L = *layout;
  const std::size_t G = L.groups, N = L.tokens;
  const std::size_t E = q.shape().back();
  if (heads == 0 || E % heads != 0) throw std::invalid_argument("attention: heads must divide the embedding dim");
  if (q.numel() != G * N * E || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw std::invalid_argument("attention: q/k/v shape mismatch with layout");
  }
  const bool biased = bias_table.defined() && !L.relative_index.empty();
  if (biased && (bias_table.shape() != Shape{L.table_rows, heads})) {
    throw std::invalid_argument("attention: bias table must be [" + std::to_string(L.table_rows) + " x heads]");
  }
  if (L.mask_id.size() != G) throw std::invalid_argument("attention: mask shape mismatch");
  const std::size_t dh = E / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const T* qp = q.value().data().data();
  const T* kp = k.value().data().data();
  const T* vp = v.value().data().data();
  const T* tb = biased ? bias_table.value().data().data() : nullptr;

  auto probs = std::make_shared<std::vector<T>>(G * heads * N * N);
  Tensor<T> out(q.shape());
  T* op = out.data().data();
  for (std::size_t g = 0; g < G; ++g) {
    const std::uint8_t* blocked = L.mask_id[g] >= 0 ? L.blocked.data() + L.mask_id[g] * N * N : nullptr;
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs->data() + (g * heads + h) * N * N;
      for (std::size_t t = 0; t < N; ++t) {
        const T* qr = qp + (g * N + t) * E + h * dh;
        T* row = P + t * N;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t s = 0; s < N; ++s) {
          const T* kr = kp + (g * N + s) * E + h * dh;
          T dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qr[c] * kr[c];
          T score = dot * scale;
          if (tb) score += tb[L.relative_index[t * N + s] * heads + h];
          if (blocked && blocked[t * N + s]) score += static_cast<T>(kMaskedScore);
          row[s] = score;
          mx = std::max(mx, score);
        }
        T total = 0;
        for (std::size_t s = 0; s < N; ++s) {
          row[s] = std::exp(row[s] - mx);
          total += row[s];
        }
        const T inv = T(1) / total;
        T* orow = op + (g * N + t) * E + h * dh;
        for (std::size_t s = 0; s < N; ++s) {
          row[s] *= inv;
          const T p = row[s];
          const T* vr = vp + (g * N + s) * E + h * dh;
          for (std::size_t c = 0; c < dh; ++c) orow[c] += p * vr[c];
        }
      }
    }
  }

  return Var<T>::make_result(
      std::move(out), {&q, &k, &v, &bias_table}, [layout, probs, heads, dh, scale, biased](Node<T>& self) {
        const AttentionLayout& L = *layout;
        const std::size_t G = L.groups, N = L.tokens, E = heads * dh;
        const T* qp = self.input(0).value.data().data();
        const T* kp = self.input(1).value.data().data();
        const T* vp = self.input(2).value.data().data();
        T* gq = self.input_needs_grad(0) ? self.input(0).grad_buffer().data().data() : nullptr;
        T* gk = self.input_needs_grad(1) ? self.input(1).grad_buffer().data().data() : nullptr;
        T* gv = self.input_needs_grad(2) ? self.input(2).grad_buffer().data().data() : nullptr;
        T* gt = biased && self.input_needs_grad(3) ? self.input(3).grad_buffer().data().data() : nullptr;
        const T* up = self.grad.data().data();
        std::vector<T> dS(N * N);
        for (std::size_t g = 0; g < G; ++g) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* P = probs->data() + (g * heads + h) * N * N;
            for (std::size_t t = 0; t < N; ++t) {
              const T* ur = up + (g * N + t) * E + h * dh;
              T dot = 0;
              for (std::size_t s = 0; s < N; ++s) {
                const T* vr = vp + (g * N + s) * E + h * dh;
                T dp = 0;
                for (std::size_t c = 0; c < dh; ++c) dp += ur[c] * vr[c];
                dS[t * N + s] = dp;
                dot += P[t * N + s] * dp;
                if (gv) {
                  T* gvr = gv + (g * N + s) * E + h * dh;
                  const T p = P[t * N + s];
                  for (std::size_t c = 0; c < dh; ++c) gvr[c] += p * ur[c];
                }
              }
              for (std::size_t s = 0; s < N; ++s) dS[t * N + s] = P[t * N + s] * (dS[t * N + s] - dot);
            }
            for (std::size_t t = 0; t < N; ++t) {
              const T* qr = qp + (g * N + t) * E + h * dh;
              T* gqr = gq ? gq + (g * N + t) * E + h * dh : nullptr;
              for (std::size_t s = 0; s < N; ++s) {
                const T d = dS[t * N + s];
                if (gt) gt[L.relative_index[t * N + s] * heads + h] += d;
                const T ds = d * scale;
                const T* kr = kp + (g * N + s) * E + h * dh;
                if (gqr) {
                  for (std::size_t c = 0; c < dh; ++c) gqr[c] += ds * kr[c];
                }
                if (gk) {
                  T* gkr = gk + (g * N + s) * E + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkr[c] += ds * qr[c];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> multi_head_attention(const Var<T>& tokens, const AttentionParams<T>& params,
                            const std::shared_ptr<const AttentionLayout>& layout) {
  Var<T> q = linear(tokens, params.query);
  Var<T> k = linear(tokens, params.key);
  Var<T> v = linear(tokens, params.value);
  Var<T> attended = grouped_attention(q, k, v, params.bias_table, layout, params.heads);
  return linear(attended, params.output);
}

#define COSTFORMER_INSTANTIATE_WINDOW_ATTENTION(T)                                                           \
  template Var<T> window_partition(const Var<T>&, const WindowPartition&);                                    \
  template Var<T> window_reverse(const Var<T>&, const WindowPartition&);                                      \
  template Var<T> grouped_attention(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,               \
                                    const std::shared_ptr<const AttentionLayout>&, std::size_t);              \
  template Var<T> multi_head_attention(const Var<T>&, const AttentionParams<T>&,                              \
                                       const std::shared_ptr<const AttentionLayout>&);

COSTFORMER_INSTANTIATE_WINDOW_ATTENTION(float)
COSTFORMER_INSTANTIATE_WINDOW_ATTENTION(double)

}  // namespace costformer
