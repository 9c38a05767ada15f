// bench: synthetic radar corruption sweeps, scene generation and single-shot corruption.
//
// Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "rcr/bench.hpp"
#include "rcr/image_corruption.hpp"
#include "rcr/pnm.hpp"
#include "rcr/radar_corruption.hpp"
#include "rcr/voxel_3dge.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct RunArgs {
  std::string config;
  std::string out_dir;
  std::size_t jobs = 1;
  bool emit_heatmaps = false;
  bool timing = false;
};

struct SceneArgs {
  std::uint64_t seed = 0;
  std::string out;
  std::string boxes_out;
  std::string config;
};

struct CorruptArgs {
  std::string kind;
  std::optional<double> level;
  std::uint64_t seed = 0;
  std::string in;
  std::string out;
  std::string boxes;
  std::string mode = "PointRelated";
  double ratio = rcr::constants::kDefaultSpuriousRatio;
  int gamma = 0;
};

struct ManifestArgs {
  double clean_ratio = rcr::constants::kCleanRatio;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  std::string out;
};

struct DegradeArgs {
  std::string in;
  std::string out;
  std::string kind;
  std::string level;
  std::string map;
  std::uint64_t seed = 0;
};

struct VoxelizeArgs {
  std::string in;
  std::string out;
  std::string bev_out;
  std::string pipeline = "raw";
};

std::string heatmap_name(const rcr::BenchRow& row, const char* which) {
  return std::string(rcr::benchmark_label(row.kind)) + "_" + std::string(rcr::to_string(row.kind)) + "_l" +
         rcr::format_double(row.level) + "_r" + std::to_string(row.replicate) + "_" +
         std::string(rcr::to_string(row.pipeline)) + "_" + which + ".pgm";
}

int cmd_run(const RunArgs& a) {
  const rcr::SweepConfig cfg = a.config.empty() ? rcr::default_sweep_config() : rcr::load_sweep_config(a.config);
  if (a.jobs == 0) throw rcr::ConfigError("--jobs must be at least 1");
  const fs::path out_dir(a.out_dir);
  fs::create_directories(out_dir);
  const rcr::BenchReport report = rcr::run_sweep(cfg, {a.jobs, a.emit_heatmaps});
  rcr::write_report_csv(out_dir / "report.csv", report, a.timing);

  std::size_t failed = 0;
  for (const rcr::BenchRow& row : report.rows) {
    if (!row.error.empty()) ++failed;
  }
  if (a.emit_heatmaps) {
    const fs::path dir = out_dir / "heatmaps";
    fs::create_directories(dir);
    for (const rcr::BenchRow& row : report.rows) {
      if (!row.error.empty()) continue;
      rcr::emit_heatmap(row.clean_heatmap, dir / heatmap_name(row, "clean"));
      rcr::emit_heatmap(row.processed_heatmap, dir / heatmap_name(row, "processed"));
    }
  }
  std::cout << report.rows.size() << " rows";
  if (failed) std::cout << ", " << failed << " with errors";
  std::cout << " -> " << (out_dir / "report.csv").string() << '\n';
  return 0;
}

int cmd_gen_scene(const SceneArgs& a) {
  const rcr::SweepConfig cfg = a.config.empty() ? rcr::default_sweep_config() : rcr::load_sweep_config(a.config);
  rcr::Rng rng(a.seed);
  const rcr::Scene scene = rcr::gen_scene(cfg.scene, cfg.grid, rng);
  rcr::write_cloud_csv(a.out, scene.cloud);
  if (!a.boxes_out.empty()) rcr::write_boxes_csv(a.boxes_out, scene.cloud.frame_id, scene.boxes);
  return 0;
}

int cmd_corrupt(const CorruptArgs& a) {
  rcr::CorruptionSpec spec;
  spec.kind = rcr::parse_corruption_kind(a.kind);
  spec.mode = rcr::parse_spurious_mode(a.mode);
  spec.spurious_ratio = a.ratio;
  spec.gamma = a.gamma;
  spec.seed = a.seed;
  if (a.level) {
    const double level = *a.level;
    if (rcr::is_sigma_kind(spec.kind) ? !(level > 0.0 && std::isfinite(level))
                                      : !(level >= 1.0 && level == std::floor(level))) {
      throw rcr::ConfigError("--level " + rcr::format_double(level) + " is not valid for " +
                             std::string(rcr::to_string(spec.kind)));
    }
  }
  if (!(a.ratio > 0.0 && a.ratio <= 1.0)) throw rcr::ConfigError("--ratio must lie in (0, 1]");
  if (a.gamma != 0 && a.gamma != 1) throw rcr::ConfigError("--gamma must be 0 or 1");

  const std::vector<rcr::PointCloud> frames = rcr::read_clouds_csv(a.in);
  std::vector<rcr::PointCloud> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto boxes = a.boxes.empty() ? std::vector<rcr::BoxAnnotation>{}
                                       : rcr::read_boxes_csv(a.boxes, frames[i].frame_id);
    rcr::Rng rng(a.seed, i);
    out.push_back(rcr::apply_corruption(spec, frames[i], boxes, rcr::default_grid(), rng, a.level));
  }
  rcr::write_clouds_csv(a.out, out);
  return 0;
}

int cmd_gen_manifest(const ManifestArgs& a) {
  rcr::write_manifest_csv(a.out, rcr::gen_manifest(a.count, a.clean_ratio, a.seed));
  return 0;
}

int cmd_degrade(const DegradeArgs& a) {
  rcr::ImageCorruptionSpec spec;
  if (!a.kind.empty()) spec.kind = rcr::parse_image_degradation(a.kind);
  if (!a.level.empty()) spec.level = rcr::parse_severity(a.level);
  spec.seed = a.seed;
  const rcr::DegradationDraw draw = rcr::draw_degradation(spec);
  const rcr::ImagePlane img = rcr::image_from_pnm(rcr::read_pnm(a.in));
  std::optional<rcr::DegradationMap> map;
  if (draw.kind != rcr::ImageDegradation::LowLight) {
    if (a.map.empty()) throw rcr::ConfigError("weather degradation needs --map");
    const auto weather = draw.kind == rcr::ImageDegradation::Rain   ? rcr::WeatherKind::Rain
                         : draw.kind == rcr::ImageDegradation::Snow ? rcr::WeatherKind::Snow
                                                                    : rcr::WeatherKind::Fog;
    map = rcr::map_from_pnm(rcr::read_pnm(a.map), weather);
  }
  rcr::write_pnm(a.out, rcr::image_to_pnm(rcr::apply_degradation(img, draw, map ? &*map : nullptr)));
  std::cout << rcr::to_string(draw.kind) << ' ' << rcr::to_string(draw.level);
  if (draw.kind == rcr::ImageDegradation::LowLight) std::cout << " gamma=" << rcr::format_double(draw.gamma);
  std::cout << '\n';
  return 0;
}

int cmd_voxelize(const VoxelizeArgs& a) {
  const rcr::PointCloud cloud = rcr::read_cloud_csv(a.in);
  const rcr::GridSpec grid = rcr::default_grid();
  const rcr::Pipeline pipeline = rcr::parse_pipeline(a.pipeline);
  rcr::VoxelGrid vg = pipeline == rcr::Pipeline::Raw
                          ? rcr::voxelize(cloud, grid).grid
                          : rcr::gaussian_expansion(cloud, grid, rcr::HeuristicProjector{},
                                                    pipeline == rcr::Pipeline::GaussianPlanar
                                                        ? rcr::ExponentMode::PlanarXY
                                                        : rcr::ExponentMode::Isotropic3D);
  rcr::write_voxel_grid(a.out, vg);
  if (!a.bev_out.empty()) rcr::emit_heatmap(rcr::bev_project(vg), a.bev_out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radar corruption benchmark harness"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run a corruption sweep and write report.csv");
  run->add_option("--config", run_args.config, "Sweep config (JSON); defaults when omitted")->check(CLI::ExistingFile);
  run->add_option("--out-dir", run_args.out_dir, "Output directory")->required();
  run->add_option("--jobs", run_args.jobs, "Worker threads");
  run->add_flag("--emit-heatmaps", run_args.emit_heatmaps, "Write clean/processed BEV heatmaps as PGM");
  run->add_flag("--timing", run_args.timing, "Record wall time per row (output is no longer reproducible)");

  SceneArgs scene_args;
  auto* scene = app.add_subcommand("gen-scene", "Generate one synthetic scene");
  scene->add_option("--seed", scene_args.seed, "Scene seed")->required();
  scene->add_option("--out", scene_args.out, "Point cloud CSV")->required();
  scene->add_option("--boxes-out", scene_args.boxes_out, "Box annotation CSV");
  scene->add_option("--config", scene_args.config, "Sweep config supplying scene and grid")->check(CLI::ExistingFile);

  CorruptArgs corrupt_args;
  auto* corrupt = app.add_subcommand("corrupt", "Apply one radar corruption to every frame of a CSV");
  corrupt->add_option("--kind", corrupt_args.kind, "Kind name or benchmark label (C1..C4)")->required();
  corrupt->add_option("--level", corrupt_args.level, "Sigma, or count for count kinds");
  corrupt->add_option("--seed", corrupt_args.seed, "Seed")->required();
  corrupt->add_option("--in", corrupt_args.in, "Input CSV")->required()->check(CLI::ExistingFile);
  corrupt->add_option("--out", corrupt_args.out, "Output CSV")->required();
  corrupt->add_option("--boxes", corrupt_args.boxes, "Box CSV (in-box key-point missing)")->check(CLI::ExistingFile);
  corrupt->add_option("--mode", corrupt_args.mode, "Spurious mode: PointRelated or Random");
  corrupt->add_option("--ratio", corrupt_args.ratio, "Spurious ratio");
  corrupt->add_option("--gamma", corrupt_args.gamma, "Key-point missing scope: 0 whole cloud, 1 in-box");

  ManifestArgs manifest_args;
  auto* manifest = app.add_subcommand("gen-manifest", "Emit a clean/noisy training manifest");
  manifest->add_option("--clean-ratio", manifest_args.clean_ratio, "Fraction of clean entries");
  manifest->add_option("--count", manifest_args.count, "Number of entries");
  manifest->add_option("--seed", manifest_args.seed, "Seed");
  manifest->add_option("--out", manifest_args.out, "Manifest CSV")->required();

  DegradeArgs degrade_args;
  auto* degrade = app.add_subcommand("degrade", "Apply an image degradation to a PGM/PPM");
  degrade->add_option("--in", degrade_args.in, "Input image")->required()->check(CLI::ExistingFile);
  degrade->add_option("--out", degrade_args.out, "Output image")->required();
  degrade->add_option("--kind", degrade_args.kind, "lowlight, rain, snow or fog; drawn when omitted");
  degrade->add_option("--level", degrade_args.level, "light or heavy; drawn when omitted");
  degrade->add_option("--map", degrade_args.map, "Degradation map image for weather kinds")->check(CLI::ExistingFile);
  degrade->add_option("--seed", degrade_args.seed, "Seed");

  VoxelizeArgs voxelize_args;
  auto* voxel = app.add_subcommand("voxelize", "Voxelize a single-frame CSV on the default grid");
  voxel->add_option("--in", voxelize_args.in, "Input CSV")->required()->check(CLI::ExistingFile);
  voxel->add_option("--out", voxelize_args.out, "Binary voxel grid")->required();
  voxel->add_option("--bev-out", voxelize_args.bev_out, "BEV heatmap PGM");
  voxel->add_option("--pipeline", voxelize_args.pipeline, "raw, 3dge_planar or 3dge_isotropic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*scene) return cmd_gen_scene(scene_args);
    if (*corrupt) return cmd_corrupt(corrupt_args);
    if (*manifest) return cmd_gen_manifest(manifest_args);
    if (*degrade) return cmd_degrade(degrade_args);
    if (*voxel) return cmd_voxelize(voxelize_args);
  } catch (const rcr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
