#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "rcr/core_types.hpp"
#include "rcr/image_corruption.hpp"
#include "rcr/radar_corruption.hpp"
#include "rcr/voxel_3dge.hpp"

namespace rcr {

/// Synthetic scene layout: dense target clusters plus sparse uniform clutter.
struct SceneConfig {
  std::size_t cluster_count = 1;
  std::size_t points_per_cluster = 30;
  double cluster_radius_m = 2.0;
  std::size_t noise_point_count = 50;
  AxisRange cluster_rcs{5.0, 10.0};
  AxisRange noise_rcs{0.5, 2.0};
  AxisRange cluster_velocity{-1.0, 1.0};
  AxisRange noise_velocity{-1.0, 1.0};
  double box_height_m = 2.0;
  /// Explicit centers for the first clusters; the rest are placed at random.
  std::vector<Vec3> cluster_centers{{10.0, 5.0, 0.0}};
};

enum class Pipeline { Raw, GaussianPlanar, GaussianIsotropic };

std::string_view to_string(Pipeline pipeline) noexcept;
Pipeline parse_pipeline(std::string_view text);

struct SweepConfig {
  SceneConfig scene;
  GridSpec grid;
  std::vector<CorruptionSpec> corruptions;
  std::map<CorruptionKind, std::vector<double>> levels;
  std::vector<Pipeline> pipelines{Pipeline::Raw, Pipeline::GaussianPlanar};
  Projector projector = HeuristicProjector{};
  std::size_t replicates = 10;
  std::uint64_t master_seed = 0;

  /// Throws ConfigError when replicates is zero, a corruption has no levels, or the grid is invalid.
  void validate() const;
};

/// C1..C4 at two levels each, 10 replicates, raw and planar 3DGE on the default grid.
SweepConfig default_sweep_config();

/// Missing fields keep their defaults; unknown fields raise ConfigError.
/// Relative weight-file paths resolve against `base_dir`.
SweepConfig sweep_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
SweepConfig load_sweep_config(const std::filesystem::path& path);

Scene gen_scene(const SceneConfig& cfg, const GridSpec& grid, Rng& rng);

/// Row seed from (master seed, kind, level, replicate); independent of other rows.
std::uint64_t row_seed(std::uint64_t master_seed, CorruptionKind kind, double level, std::size_t replicate) noexcept;

/// Mean |heatmap| over cells whose centers lie in a box footprint, divided by the
/// mean over nonzero cells outside all boxes. +infinity when no such outside cell exists.
double metric_snr(const Heatmap& bev, const std::vector<BoxAnnotation>& boxes, const GridSpec& spec);

struct PeakComparison {
  bool consistent = false;
  double l2_cells = 0.0;
};

/// Argmax position, first occurrence in row-major order.
std::pair<std::size_t, std::size_t> heatmap_argmax(const Heatmap& map);
PeakComparison metric_peak(const Heatmap& clean, const Heatmap& processed);

/// Symmetric Chamfer distance on (x, y, z), brute force.
double metric_chamfer(const PointCloud& a, const PointCloud& b);

/// BEV heatmap of a cloud after the given pipeline.
Heatmap process_cloud(const PointCloud& cloud, const GridSpec& grid, Pipeline pipeline, const Projector& projector);

struct BenchRow {
  CorruptionKind kind = CorruptionKind::SpuriousPoints;
  double level = 0.0;
  std::size_t replicate = 0;
  Pipeline pipeline = Pipeline::Raw;
  double snr_before = 0.0;
  double snr_after = 0.0;
  bool peak_consistent = false;
  double peak_l2_cells = 0.0;
  double chamfer_m = 0.0;
  std::size_t points_in = 0;
  std::size_t points_out = 0;
  double wall_ms = 0.0;
  std::string error;  // empty on success

  Heatmap clean_heatmap;      // kept only when requested
  Heatmap processed_heatmap;  // kept only when requested
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

struct SweepOptions {
  std::size_t jobs = 1;
  bool keep_heatmaps = false;
};

/// Rows in declaration order: corruption, level, replicate, pipeline.
BenchReport run_sweep(const SweepConfig& cfg, const SweepOptions& options = {});

/// Header plus one line per row. wall_ms is written as 0 unless include_timing is set,
/// which keeps repeated runs byte-identical.
std::string report_csv(const BenchReport& report, bool include_timing = false);
void write_report_csv(const std::filesystem::path& path, const BenchReport& report, bool include_timing = false);

/// 8-bit P5 image, width = cols and height = rows; pixel = floor(255 * (v - min) / (max - min)).
PnmImage heatmap_to_pgm(const Heatmap& map);
void emit_heatmap(const Heatmap& map, const std::filesystem::path& path);

/// One training-set manifest entry. Clean entries leave the corruption fields empty.
struct ManifestEntry {
  std::size_t index = 0;
  std::uint64_t scene_seed = 0;
  bool noisy = false;
  std::optional<CorruptionKind> radar_kind;
  double radar_level = 0.0;
  std::optional<DegradationDraw> image;
};

/// Exactly round(count * (1 - clean_ratio)) noisy entries, each with one random
/// radar corruption at a random level and one image degradation for the same timestamp.
std::vector<ManifestEntry> gen_manifest(std::size_t count, double clean_ratio, std::uint64_t seed);
void write_manifest_csv(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

}  // namespace rcr
