#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "costformer/bench.hpp"
#include "costformer/config.hpp"
#include "costformer/io.hpp"
#include "costformer/pipeline.hpp"
#include "costformer/train.hpp"

using namespace costformer;
namespace fs = std::filesystem;

namespace {

RunConfig resolve_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

std::vector<SyntheticScene> make_scenes(const RunConfig& config) {
  std::vector<SyntheticScene> scenes;
  for (std::size_t k = 0; k < config.train_scenes; ++k) {
    scenes.push_back(make_synthetic_scene(config.scene, config.scene_seed + k));
  }
  return scenes;
}

int cmd_synth(const RunConfig& config, const fs::path& out) {
  SyntheticScene scene = make_synthetic_scene(config.scene, config.scene_seed);
  save_scene(out, scene);
  std::cout << "wrote scene " << scene.height() << "x" << scene.width() << " with " << scene.sources.size()
            << " source views to " << out << '\n';
  return 0;
}

int cmd_train(RunConfig config, const fs::path& out, const std::string& scene_dir, bool quiet) {
  std::vector<SyntheticScene> scenes;
  if (scene_dir.empty()) {
    scenes = make_scenes(config);
  } else {
    scenes.push_back(load_scene(scene_dir));
  }
  Model<float> model = make_model<float>(config.model);
  const double before = evaluate(model, scenes);
  fs::create_directories(out);
  std::ofstream trace(out / "loss_trace.tsv");
  trace << "step\tloss\n";
  TrainResult result = train(model, scenes, config.train, [&](std::size_t step, double loss) {
    trace << step << '\t' << loss << '\n';
    if (!quiet && (step % 25 == 0 || step + 1 == config.train.steps)) {
      std::printf("step %5zu  loss %.6g\n", step, loss);
      std::fflush(stdout);
    }
  });
  const double after = evaluate(model, scenes);
  save_checkpoint(out / "checkpoint.bin", snapshot(model.store, to_json(config).dump()));
  std::printf("mean abs inverse-depth error: %.6g -> %.6g\n", before, after);
  return 0;
}

int cmd_infer(const fs::path& checkpoint_path, const fs::path& scene_dir, const fs::path& out) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  RunConfig config = ck.config.empty() ? RunConfig{} : run_config_from_json(nlohmann::json::parse(ck.config));
  Model<float> model = make_model<float>(config.model);
  restore(model.store, ck);
  SyntheticScene scene = load_scene(scene_dir);
  NoGradGuard guard;
  ModelOutput<float> result = run_model(model, scene);
  fs::create_directories(out);
  write_pfm(out / "depth.pfm", result.depth);
  write_png16(out / "depth_preview.png", result.depth, scene.d_min, scene.d_max);
  std::printf("mean abs inverse-depth error: %.6g\n", mean_inverse_depth_error(result.depth, scene.depth));
  return 0;
}

int cmd_gradcheck(RunConfig config, std::size_t size, double fraction, double tol, std::uint64_t seed) {
  config.scene.height = config.scene.width = size;
  SyntheticScene scene = make_synthetic_scene(config.scene, config.scene_seed);
  ModelGradCheckConfig check;
  check.fraction = fraction;
  check.seed = seed;
  GradCheckReport report = check_model_gradient(config.model, scene, check);
  std::printf("checked %zu parameter elements: max abs err %.3g, max rel err %.3g (tol %.3g) %s\n",
              report.num_elements, report.max_abs_error, report.max_rel_error, tol,
              report.passes(tol) ? "PASS" : "FAIL");
  return report.passes(tol) ? 0 : 1;
}

int cmd_bench(BenchConfig config, const fs::path& out) {
  BenchReport report = bench_attention(config);
  std::cout << to_table(report);
  if (!out.empty()) {
    std::ofstream(out) << to_json(report).dump(2) << '\n';
  }
  return 0;
}

struct Check {
  const char* name;
  bool ok;
};

int cmd_selftest() {
  std::vector<Check> checks;
  {
    Camera cam;
    bool ok = true;
    for (double d : {0.5, 2.0, 9.0}) {
      WarpedPixel w = warp_pixel({3.0, 4.0}, d, cam, cam, 8, 8);
      ok = ok && w.valid && std::abs(w.position.x() - 3.0) < 1e-12 && std::abs(w.position.y() - 4.0) < 1e-12;
    }
    checks.push_back({"identity rig warp", ok});
  }
  {
    SceneConfig sc;
    sc.height = sc.width = 32;
    SyntheticScene scene = make_synthetic_scene(sc, 2);
    ModelConfig mc = default_model_config();
    Model<float> full = make_model<float>(mc);
    Model<float> base = make_model<float>(ablated(mc));
    NoGradGuard guard;
    checks.push_back({"plug-in identity", run_model(full, scene).depth == run_model(base, scene).depth});
  }
  {
    ParamStore<float> store(3);
    store.add("a", {2, 3}, Init::trunc_normal);
    store.add("b", {4}, Init::fan_in_uniform);
    const fs::path path = fs::temp_directory_path() / "costformer_selftest.bin";
    save_checkpoint(path, snapshot(store, "{}"));
    Checkpoint back = load_checkpoint(path);
    fs::remove(path);
    bool ok = back.entries.size() == 2 && back.config == "{}";
    for (std::size_t i = 0; ok && i < 2; ++i) ok = back.entries[i].second == store.entries()[i].second.value();
    checks.push_back({"checkpoint round trip", ok});
  }
  {
    Tensor<double> cost({1, 1, 3}, 0.0);
    cost[1] = 1e4;
    Var<double> depth = soft_argmin(AggregatedCost<double>{Var<double>(cost)}, generate_hypotheses<double>(
                                                                                   1.0, 3.0, 3, HypothesisSpacing::linear));
    checks.push_back({"saturated soft argmin", std::abs(depth.value()[0] - 2.0) < 1e-12});
  }
  bool all = true;
  for (const Check& c : checks) {
    std::printf("%-24s %s\n", c.name, c.ok ? "PASS" : "FAIL");
    all = all && c.ok;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CostFormer multi-view stereo on synthetic scenes"};
  app.require_subcommand(0, 1);
  std::string config_path;
  bool print_config = false;
  app.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_flag("--print-config", print_config, "Print the effective config and exit");

  auto* synth = app.add_subcommand("synth", "Render a synthetic slanted-plane scene");
  fs::path synth_out = "scene";
  std::int64_t synth_seed = -1;
  synth->add_option("-o,--out", synth_out, "Output directory");
  synth->add_option("--seed", synth_seed, "Scene seed (overrides the config)");

  auto* train_cmd = app.add_subcommand("train", "Train on synthetic scenes");
  fs::path train_out = "run";
  std::string train_scene;
  std::int64_t train_seed = -1, train_steps = -1;
  bool quiet = false;
  train_cmd->add_option("-o,--out", train_out, "Output directory for checkpoint and loss trace");
  train_cmd->add_option("--scene", train_scene, "Scene directory (default: synthesize from the config)");
  train_cmd->add_option("--seed", train_seed, "Model seed (overrides the config)");
  train_cmd->add_option("--steps", train_steps, "Optimizer steps (overrides the config)");
  train_cmd->add_flag("-q,--quiet", quiet, "Only print the final summary");

  auto* infer = app.add_subcommand("infer", "Predict depth for a scene directory");
  fs::path checkpoint_path, infer_scene, infer_out = "prediction";
  infer->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  infer->add_option("--scene", infer_scene, "Scene directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("-o,--out", infer_out, "Output directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "End-to-end finite-difference gradient check");
  std::size_t gc_size = 32;
  double gc_fraction = 0.01, gc_tol = 2e-3;
  std::uint64_t gc_seed = 23;
  gradcheck->add_option("--size", gc_size, "Scene extent (multiple of 4)");
  gradcheck->add_option("--fraction", gc_fraction, "Share of parameter elements to check");
  gradcheck->add_option("--tol", gc_tol, "Relative error tolerance");
  gradcheck->add_option("--seed", gc_seed, "Sampling and jitter seed");

  auto* bench = app.add_subcommand("bench", "Windowed vs global attention scaling");
  BenchConfig bench_config;
  fs::path bench_out;
  bench->add_option("--sizes", bench_config.sizes, "Spatial extents S of S x S token grids");
  bench->add_option("--depth", bench_config.depth, "Tokens along depth");
  bench->add_option("--embed", bench_config.embed, "Embedding dimension");
  bench->add_option("--window", bench_config.window, "Window extents h w d")->expected(3);
  bench->add_option("--min-seconds", bench_config.min_seconds, "Minimum timing budget per measurement");
  bench->add_option("-o,--out", bench_out, "JSON report path");

  auto* selftest = app.add_subcommand("selftest", "Quick consistency checks");

  CLI11_PARSE(app, argc, argv);
  try {
    RunConfig config = resolve_config(config_path);
    if (synth_seed >= 0) config.scene_seed = static_cast<std::uint64_t>(synth_seed);
    if (train_seed >= 0) config.model.seed = static_cast<std::uint64_t>(train_seed);
    if (train_steps >= 0) config.train.steps = static_cast<std::size_t>(train_steps);
    if (print_config) {
      std::cout << to_json(config).dump(2) << '\n';
      return 0;
    }
    if (*synth) return cmd_synth(config, synth_out);
    if (*train_cmd) return cmd_train(config, train_out, train_scene, quiet);
    if (*infer) return cmd_infer(checkpoint_path, infer_scene, infer_out);
    if (*gradcheck) return cmd_gradcheck(config, gc_size, gc_fraction, gc_tol, gc_seed);
    if (*bench) return cmd_bench(bench_config, bench_out);
    if (*selftest) return cmd_selftest();
    std::cout << app.help();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
