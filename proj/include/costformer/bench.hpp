#pragma once

#include <json.hpp>
#include <vector>

#include "costformer/window_attention.hpp"

namespace costformer {

struct BenchConfig {
  std::vector<std::size_t> sizes{32, 48, 64, 96, 128};  // spatial extent S of an S x S token grid
  std::size_t depth = 2;                                // D* tokens along depth
  std::size_t embed = 8;
  Extents3 window{7, 7, 2};
  double min_seconds = 0.2;  // keep repeating until this much time was spent
  std::size_t max_repeats = 20;
  std::uint64_t seed = 5;
};

struct BenchRow {
  std::size_t size = 0;
  std::size_t tokens = 0;
  std::size_t windows = 0;
  std::size_t tokens_per_window = 0;
  double windowed_seconds = 0.0;
  double global_seconds = 0.0;
  std::size_t windowed_matrix_bytes = 0;  // all attention weights at 4 bytes each
  std::size_t global_matrix_bytes = 0;
  std::size_t windowed_peak_bytes = 0;    // largest working set the kernel held
  std::size_t global_peak_bytes = 0;
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchRow> rows;
  double windowed_exponent = 0.0;  // slope of log time against log S
  double global_exponent = 0.0;
};

// Single-head softmax attention computed row by row over groups of `tokens` rows each; returns the
// bytes of scratch it held at peak. q, k, v and out are [groups * tokens x embed].
std::size_t attention_forward(const float* q, const float* k, const float* v, float* out, std::size_t groups,
                              std::size_t tokens, std::size_t embed);

// Least-squares slope of log(y) against log(x).
double fit_exponent(const std::vector<double>& x, const std::vector<double>& y);

BenchRow bench_size(const BenchConfig& config, std::size_t size, bool run_global = true);
BenchReport bench_attention(const BenchConfig& config);

nlohmann::json to_json(const BenchReport& report);
std::string to_table(const BenchReport& report);

}  // namespace costformer
