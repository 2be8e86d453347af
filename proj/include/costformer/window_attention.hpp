#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "costformer/ops.hpp"

namespace costformer {

using Extents3 = std::array<std::size_t, 3>;

// Window extents along (height, width, depth). A shifted spec displaces the partition by
// half a window along every axis.
struct WindowSpec {
  Extents3 extents{7, 7, 2};
  bool shifted = false;

  Extents3 shift() const {
    if (!shifted) return {0, 0, 0};
    return {extents[0] / 2, extents[1] / 2, extents[2] / 2};
  }
};

inline constexpr double kMaskedScore = -1e9;

// Independent attention problems of equal token count, with an optional relative-position bias
// (`relative_index` indexes rows of a [table_rows x heads] table) and optional blocking masks.
struct AttentionLayout {
  std::size_t groups = 0;
  std::size_t tokens = 0;
  std::size_t table_rows = 0;
  std::vector<std::int32_t> relative_index;  // tokens * tokens, empty when unbiased
  std::vector<std::int32_t> mask_id;         // per group; -1 when nothing is blocked
  std::vector<std::uint8_t> blocked;         // [masks x tokens x tokens]

  std::size_t num_masks() const { return tokens == 0 ? 0 : blocked.size() / (tokens * tokens); }
};

struct WindowPartition {
  Extents3 grid{};     // token grid (H*, W*, D*)
  Extents3 window{};   // effective window, clamped to the grid
  Extents3 shift{};    // effective shift, zero along axes covered by a single window
  Extents3 padded{};
  std::size_t num_windows = 0;
  std::size_t tokens_per_window = 0;
  RowIndex to_windows;    // [num_windows * tokens_per_window] -> grid token or -1 (padding)
  RowIndex from_windows;  // [grid tokens] -> window slot
  std::shared_ptr<const AttentionLayout> spatial;  // all tokens of a window
  std::shared_ptr<const AttentionLayout> depth;    // each spatial position's depth fiber
};

// ceil(H/h_s) * ceil(W/w_s) * ceil(D/d_s)
std::size_t window_count(const Extents3& grid, const Extents3& window);

std::size_t bias_table_rows(const Extents3& window);

// Relative offsets of every token pair of `window` mapped into a table built for `table_window`
// (which must be at least as large along every axis).
std::vector<std::int32_t> relative_position_index(const Extents3& window, const Extents3& table_window);

// Memoized per (grid, spec). Windows larger than the grid are clamped to it and not shifted
// along that axis.
std::shared_ptr<const WindowPartition> make_window_partition(const Extents3& grid, const WindowSpec& spec);

template <typename T>
Var<T> window_partition(const Var<T>& x, const WindowPartition& partition);
template <typename T>
Var<T> window_reverse(const Var<T>& windows, const WindowPartition& partition);

// Scaled dot-product attention per group and head: softmax(q k^T / sqrt(E / heads) + bias + mask) v.
// q, k, v hold groups * tokens rows of E values; bias_table may be undefined.
template <typename T>
Var<T> grouped_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& bias_table,
                         const std::shared_ptr<const AttentionLayout>& layout, std::size_t heads);

template <typename T>
struct AttentionParams {
  LinearParams<T> query;
  LinearParams<T> key;
  LinearParams<T> value;
  LinearParams<T> output;
  Var<T> bias_table;  // [table_rows x heads]
  std::size_t heads = 1;
};

// tokens: [groups * tokens_per_group x E] -> same shape.
template <typename T>
Var<T> multi_head_attention(const Var<T>& tokens, const AttentionParams<T>& params,
                            const std::shared_ptr<const AttentionLayout>& layout);

}  // namespace costformer
