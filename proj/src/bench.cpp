#include "costformer/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace costformer {

std::size_t attention_forward(const float* q, const float* k, const float* v, float* out, std::size_t groups,
                              std::size_t tokens, std::size_t embed) {
  std::vector<float> scores(tokens);
  const float scale = 1.0f / std::sqrt(static_cast<float>(embed));
  for (std::size_t g = 0; g < groups; ++g) {
    const float* kg = k + g * tokens * embed;
    const float* vg = v + g * tokens * embed;
    for (std::size_t i = 0; i < tokens; ++i) {
      const float* qi = q + (g * tokens + i) * embed;
      float peak = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j < tokens; ++j) {
        float s = 0.0f;
        for (std::size_t e = 0; e < embed; ++e) s += qi[e] * kg[j * embed + e];
        scores[j] = s * scale;
        peak = std::max(peak, scores[j]);
      }
      float z = 0.0f;
      for (std::size_t j = 0; j < tokens; ++j) {
        scores[j] = std::exp(scores[j] - peak);
        z += scores[j];
      }
      float* oi = out + (g * tokens + i) * embed;
      std::fill_n(oi, embed, 0.0f);
      for (std::size_t j = 0; j < tokens; ++j) {
        const float w = scores[j] / z;
        for (std::size_t e = 0; e < embed; ++e) oi[e] += w * vg[j * embed + e];
      }
    }
  }
  return scores.size() * sizeof(float);
}

double fit_exponent(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_exponent: need two or more points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

namespace {

template <typename F>
double seconds(F&& run) {
  const auto t0 = std::chrono::steady_clock::now();
  run();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<float> gather(const std::vector<float>& x, const std::vector<std::int64_t>& rows, std::size_t width) {
  std::vector<float> out(rows.size() * width, 0.0f);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= 0) std::copy_n(x.begin() + rows[r] * static_cast<std::int64_t>(width), width, out.begin() + r * width);
  }
  return out;
}

}  // namespace

BenchRow bench_size(const BenchConfig& config, std::size_t size, bool run_global) {
  const Extents3 grid{size, size, config.depth};
  const std::size_t n = size * size * config.depth, E = config.embed;
  std::mt19937_64 rng(config.seed + size);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> q(n * E), k(n * E), v(n * E);
  for (auto* buf : {&q, &k, &v}) {
    for (float& x : *buf) x = dist(rng);
  }

  const auto partition = make_window_partition(grid, WindowSpec{config.window, false});
  BenchRow row;
  row.size = size;
  row.tokens = n;
  row.windows = partition->num_windows;
  row.tokens_per_window = partition->tokens_per_window;
  row.windowed_matrix_bytes = row.windows * row.tokens_per_window * row.tokens_per_window * sizeof(float);
  row.global_matrix_bytes = n * n * sizeof(float);

  const std::size_t padded = row.windows * row.tokens_per_window;
  auto windowed = [&] {
    const auto qw = gather(q, *partition->to_windows, E);
    const auto kw = gather(k, *partition->to_windows, E);
    const auto vw = gather(v, *partition->to_windows, E);
    std::vector<float> ow(padded * E);
    const std::size_t scratch =
        attention_forward(qw.data(), kw.data(), vw.data(), ow.data(), row.windows, row.tokens_per_window, E);
    const auto out = gather(ow, *partition->from_windows, E);
    row.windowed_peak_bytes = scratch + 4 * padded * E * sizeof(float) + out.size() * sizeof(float);
  };
  auto global = [&] {
    std::vector<float> out(n * E);
    const std::size_t scratch = attention_forward(q.data(), k.data(), v.data(), out.data(), 1, n, E);
    row.global_peak_bytes = scratch + out.size() * sizeof(float);
  };
  // Both kernels alternate within each repeat so they see the same machine load.
  row.windowed_seconds = std::numeric_limits<double>::infinity();
  row.global_seconds = run_global ? std::numeric_limits<double>::infinity() : 0.0;
  double spent = 0.0;
  for (std::size_t r = 0; r < config.max_repeats && (r == 0 || spent < config.min_seconds); ++r) {
    const double w = seconds(windowed);
    row.windowed_seconds = std::min(row.windowed_seconds, w);
    spent += w;
    if (run_global) {
      const double g = seconds(global);
      row.global_seconds = std::min(row.global_seconds, g);
      spent += g;
    }
  }
  return row;
}

BenchReport bench_attention(const BenchConfig& config) {
  if (config.sizes.size() < 2) throw std::invalid_argument("bench: at least two sizes required");
  BenchReport report;
  report.config = config;
  std::vector<double> sizes, windowed, global;
  for (std::size_t s : config.sizes) {
    report.rows.push_back(bench_size(config, s));
    sizes.push_back(static_cast<double>(s));
    windowed.push_back(report.rows.back().windowed_seconds);
    global.push_back(report.rows.back().global_seconds);
  }
  report.windowed_exponent = fit_exponent(sizes, windowed);
  report.global_exponent = fit_exponent(sizes, global);
  return report;
}

nlohmann::json to_json(const BenchReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const BenchRow& r : report.rows) {
    rows.push_back({{"size", r.size},
                    {"tokens", r.tokens},
                    {"windows", r.windows},
                    {"tokens_per_window", r.tokens_per_window},
                    {"windowed_seconds", r.windowed_seconds},
                    {"global_seconds", r.global_seconds},
                    {"windowed_matrix_bytes", r.windowed_matrix_bytes},
                    {"global_matrix_bytes", r.global_matrix_bytes},
                    {"windowed_peak_bytes", r.windowed_peak_bytes},
                    {"global_peak_bytes", r.global_peak_bytes}});
  }
  return {{"depth", report.config.depth},
          {"embed", report.config.embed},
          {"window", report.config.window},
          {"rows", rows},
          {"windowed_exponent", report.windowed_exponent},
          {"global_exponent", report.global_exponent}};
}

std::string to_table(const BenchReport& report) {
  std::ostringstream os;
  os << "size\ttokens\twindows\twindowed_s\tglobal_s\twindowed_matrix_bytes\tglobal_matrix_bytes\t"
        "windowed_peak_bytes\tglobal_peak_bytes\n";
  for (const BenchRow& r : report.rows) {
    os << r.size << '\t' << r.tokens << '\t' << r.windows << '\t' << r.windowed_seconds << '\t' << r.global_seconds
       << '\t' << r.windowed_matrix_bytes << '\t' << r.global_matrix_bytes << '\t' << r.windowed_peak_bytes << '\t'
       << r.global_peak_bytes << '\n';
  }
  os << "# exponent windowed " << report.windowed_exponent << " global " << report.global_exponent << '\n';
  return os.str();
}

}  // namespace costformer
