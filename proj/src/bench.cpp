#include "rcr/bench.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

namespace rcr {

namespace {

constexpr CorruptionKind kBenchmarkKinds[] = {CorruptionKind::SpuriousPoints, CorruptionKind::NonPositionalDisturbance,
                                              CorruptionKind::BeamDrop, CorruptionKind::PointShifting};

AxisRange range_from_json(const nlohmann::json& j, const char* name) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(std::string(name) + " must be a [min, max] pair");
  AxisRange r{j[0].get<double>(), j[1].get<double>()};
  if (!(r.max >= r.min)) throw ConfigError(std::string(name) + ": max must not be below min");
  return r;
}

template <typename Fn>
void for_each_field(const nlohmann::json& j, const char* where, Fn&& fn) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!fn(key, value)) throw ConfigError(std::string("unknown field '") + key + "' in " + where);
  }
}

SceneConfig scene_from_json(const nlohmann::json& j) {
  SceneConfig s;
  for_each_field(j, "scene", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "cluster_count") s.cluster_count = v.get<std::size_t>();
    else if (key == "points_per_cluster") s.points_per_cluster = v.get<std::size_t>();
    else if (key == "cluster_radius_m") s.cluster_radius_m = v.get<double>();
    else if (key == "noise_point_count") s.noise_point_count = v.get<std::size_t>();
    else if (key == "cluster_rcs") s.cluster_rcs = range_from_json(v, "cluster_rcs");
    else if (key == "noise_rcs") s.noise_rcs = range_from_json(v, "noise_rcs");
    else if (key == "cluster_velocity") s.cluster_velocity = range_from_json(v, "cluster_velocity");
    else if (key == "noise_velocity") s.noise_velocity = range_from_json(v, "noise_velocity");
    else if (key == "box_height_m") s.box_height_m = v.get<double>();
    else if (key == "cluster_centers") {
      s.cluster_centers.clear();
      for (const auto& c : v) {
        if (!c.is_array() || c.size() != 3) throw ConfigError("cluster_centers entries must be [x, y, z]");
        s.cluster_centers.push_back({c[0].get<double>(), c[1].get<double>(), c[2].get<double>()});
      }
    } else {
      return false;
    }
    return true;
  });
  if (!(s.cluster_radius_m > 0.0)) throw ConfigError("cluster_radius_m must be positive");
  if (!(s.box_height_m > 0.0)) throw ConfigError("box_height_m must be positive");
  return s;
}

GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  for_each_field(j, "grid", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "x_range") g.x_range = range_from_json(v, "x_range");
    else if (key == "y_range") g.y_range = range_from_json(v, "y_range");
    else if (key == "z_range") g.z_range = range_from_json(v, "z_range");
    else if (key == "cells") {
      if (!v.is_array() || v.size() != 3) throw ConfigError("cells must be [nx, ny, nz]");
      for (std::size_t i = 0; i < 3; ++i) g.cells[i] = v[i].get<std::size_t>();
    } else {
      return false;
    }
    return true;
  });
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return g;
}

Projector projector_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  std::string mode = "heuristic";
  std::optional<std::filesystem::path> path;
  for_each_field(j, "projector", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "mode") mode = v.get<std::string>();
    else if (key == "path") path = v.get<std::string>();
    else return false;
    return true;
  });
  if (mode == "heuristic") return HeuristicProjector{};
  if (mode != "weights-file") throw ConfigError("projector mode must be 'heuristic' or 'weights-file'");
  if (!path) throw ConfigError("weights-file projector needs 'path'");
  return load_projector_weights(path->is_relative() ? base_dir / *path : *path);
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

struct WorkItem {
  std::size_t corruption;
  double level;
  std::size_t replicate;
  Pipeline pipeline;
};

BenchRow run_row(const SweepConfig& cfg, const WorkItem& item, bool keep_heatmaps) {
  const auto start = std::chrono::steady_clock::now();
  const CorruptionSpec& spec = cfg.corruptions[item.corruption];
  BenchRow row;
  row.kind = spec.kind;
  row.level = item.level;
  row.replicate = item.replicate;
  row.pipeline = item.pipeline;
  try {
    const std::uint64_t seed = row_seed(cfg.master_seed, spec.kind, item.level, item.replicate);
    Rng scene_rng(seed, 0);
    const Scene scene = gen_scene(cfg.scene, cfg.grid, scene_rng);
    Rng corrupt_rng(seed, 1);
    const PointCloud corrupted = apply_corruption(spec, scene.cloud, scene.boxes, cfg.grid, corrupt_rng, item.level);

    row.points_in = scene.cloud.size();
    row.points_out = corrupted.size();
    const Heatmap raw_corrupted = process_cloud(corrupted, cfg.grid, Pipeline::Raw, cfg.projector);
    Heatmap clean = process_cloud(scene.cloud, cfg.grid, item.pipeline, cfg.projector);
    Heatmap processed = item.pipeline == Pipeline::Raw
                            ? raw_corrupted
                            : process_cloud(corrupted, cfg.grid, item.pipeline, cfg.projector);
    row.snr_before = metric_snr(raw_corrupted, scene.boxes, cfg.grid);
    row.snr_after = metric_snr(processed, scene.boxes, cfg.grid);
    const PeakComparison peak = metric_peak(clean, processed);
    row.peak_consistent = peak.consistent;
    row.peak_l2_cells = peak.l2_cells;
    row.chamfer_m = metric_chamfer(scene.cloud, corrupted);
    if (keep_heatmaps) {
      row.clean_heatmap = std::move(clean);
      row.processed_heatmap = std::move(processed);
    }
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  row.wall_ms = elapsed_ms(start);
  return row;
}

std::string csv_escape(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

std::string_view to_string(Pipeline pipeline) noexcept {
  switch (pipeline) {
    case Pipeline::Raw: return "raw";
    case Pipeline::GaussianPlanar: return "3dge_planar";
    case Pipeline::GaussianIsotropic: return "3dge_isotropic";
  }
  return "?";
}

Pipeline parse_pipeline(std::string_view text) {
  for (auto p : {Pipeline::Raw, Pipeline::GaussianPlanar, Pipeline::GaussianIsotropic}) {
    if (text == to_string(p)) return p;
  }
  throw ConfigError("unknown pipeline '" + std::string(text) + "'");
}

void SweepConfig::validate() const {
  if (replicates < 1) throw ConfigError("replicates must be at least 1");
  if (corruptions.empty()) throw ConfigError("corruption list is empty");
  if (pipelines.empty()) throw ConfigError("pipeline list is empty");
  for (const CorruptionSpec& c : corruptions) {
    const auto it = levels.find(c.kind);
    if (it == levels.end() || it->second.empty()) {
      throw ConfigError("no levels given for " + std::string(to_string(c.kind)));
    }
  }
  try {
    grid.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

SweepConfig default_sweep_config() {
  SweepConfig cfg;
  for (CorruptionKind kind : kBenchmarkKinds) {
    CorruptionSpec spec;
    spec.kind = kind;
    cfg.corruptions.push_back(spec);
  }
  cfg.levels[CorruptionKind::SpuriousPoints] = {3.0, 5.0};
  cfg.levels[CorruptionKind::NonPositionalDisturbance] = {3.0, 5.0};
  cfg.levels[CorruptionKind::BeamDrop] = {10.0, 14.0};
  cfg.levels[CorruptionKind::PointShifting] = {1.0, 10.0};
  return cfg;
}

SweepConfig sweep_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  SweepConfig cfg = default_sweep_config();
  try {
    for_each_field(j, "sweep config", [&](const std::string& key, const nlohmann::json& v) {
      if (key == "scene") {
        cfg.scene = scene_from_json(v);
      } else if (key == "grid") {
        cfg.grid = grid_from_json(v);
      } else if (key == "corruptions") {
        if (!v.is_array()) throw ConfigError("corruptions must be an array");
        cfg.corruptions.clear();
        for (const auto& c : v) cfg.corruptions.push_back(corruption_spec_from_json(c));
      } else if (key == "levels") {
        cfg.levels.clear();
        for_each_field(v, "levels", [&](const std::string& kind, const nlohmann::json& list) {
          if (!list.is_array()) throw ConfigError("levels." + kind + " must be an array");
          auto& dst = cfg.levels[parse_corruption_kind(kind)];
          for (const auto& l : list) dst.push_back(l.get<double>());
          return true;
        });
      } else if (key == "pipelines") {
        cfg.pipelines.clear();
        for (const auto& p : v) cfg.pipelines.push_back(parse_pipeline(p.get<std::string>()));
      } else if (key == "projector") {
        cfg.projector = projector_from_json(v, base_dir);
      } else if (key == "replicates") {
        cfg.replicates = v.get<std::size_t>();
      } else if (key == "master_seed") {
        if (!v.is_number_unsigned()) throw ConfigError("master_seed must be a non-negative integer");
        cfg.master_seed = v.get<std::uint64_t>();
      } else {
        return false;
      }
      return true;
    });
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sweep config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

SweepConfig load_sweep_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return sweep_config_from_json(j, path.parent_path());
}

Scene gen_scene(const SceneConfig& cfg, const GridSpec& grid, Rng& rng) {
  Scene scene;
  scene.seed = rng.seed();
  scene.cloud.frame_id = "scene_" + std::to_string(rng.seed());
  scene.cloud.points.reserve(cfg.cluster_count * cfg.points_per_cluster + cfg.noise_point_count);
  const double radius = cfg.cluster_radius_m;
  for (std::size_t k = 0; k < cfg.cluster_count; ++k) {
    Vec3 center;
    if (k < cfg.cluster_centers.size()) {
      center = cfg.cluster_centers[k];
    } else {
      const double margin = radius + 1.0;
      center.x = rng.uniform(grid.x_range.min + margin, grid.x_range.max - margin);
      center.y = rng.uniform(grid.y_range.min + margin, grid.y_range.max - margin);
      center.z = std::clamp(0.0, grid.z_range.min, grid.z_range.max);
    }
    scene.boxes.push_back(BoxAnnotation{center, 2.0 * radius, 2.0 * radius, cfg.box_height_m, 0.0});
    for (std::size_t i = 0; i < cfg.points_per_cluster; ++i) {
      const double r = radius * std::sqrt(rng.uniform());
      const double theta = 2.0 * std::numbers::pi * rng.uniform();
      RadarPoint p;
      p.x = center.x + r * std::cos(theta);
      p.y = center.y + r * std::sin(theta);
      p.z = center.z;
      p.rcs = rng.uniform(cfg.cluster_rcs.min, cfg.cluster_rcs.max);
      p.v = rng.uniform(cfg.cluster_velocity.min, cfg.cluster_velocity.max);
      scene.cloud.points.push_back(p);
    }
  }
  for (std::size_t i = 0; i < cfg.noise_point_count; ++i) {
    RadarPoint p;
    p.x = rng.uniform(grid.x_range.min, grid.x_range.max);
    p.y = rng.uniform(grid.y_range.min, grid.y_range.max);
    p.z = rng.uniform(grid.z_range.min, grid.z_range.max);
    p.rcs = rng.uniform(cfg.noise_rcs.min, cfg.noise_rcs.max);
    p.v = rng.uniform(cfg.noise_velocity.min, cfg.noise_velocity.max);
    scene.cloud.points.push_back(p);
  }
  return scene;
}

std::uint64_t row_seed(std::uint64_t master_seed, CorruptionKind kind, double level, std::size_t replicate) noexcept {
  std::uint64_t h = mix64(master_seed);
  h = hash_combine(h, static_cast<std::uint64_t>(kind));
  h = hash_combine(h, std::bit_cast<std::uint64_t>(level));
  return hash_combine(h, replicate);
}

double metric_snr(const Heatmap& bev, const std::vector<BoxAnnotation>& boxes, const GridSpec& spec) {
  if (bev.rows != spec.nx() || bev.cols != spec.ny()) throw std::invalid_argument("metric_snr: heatmap/grid mismatch");
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_cells = 0, out_cells = 0;
  for (std::size_t ix = 0; ix < bev.rows; ++ix) {
    for (std::size_t iy = 0; iy < bev.cols; ++iy) {
      const Vec3 c = spec.cell_center({ix, iy, 0});
      const double value = std::abs(bev.at(ix, iy));
      const bool inside = std::any_of(boxes.begin(), boxes.end(),
                                      [&](const BoxAnnotation& b) { return point_in_footprint(c.x, c.y, b); });
      if (inside) {
        in_sum += value;
        ++in_cells;
      } else if (value != 0.0) {
        out_sum += value;
        ++out_cells;
      }
    }
  }
  if (in_cells == 0) throw std::invalid_argument("metric_snr: no cell center lies inside any box");
  if (out_cells == 0) return std::numeric_limits<double>::infinity();
  return (in_sum / static_cast<double>(in_cells)) / (out_sum / static_cast<double>(out_cells));
}

std::pair<std::size_t, std::size_t> heatmap_argmax(const Heatmap& map) {
  if (map.data.empty()) throw std::invalid_argument("heatmap_argmax: empty heatmap");
  const auto it = std::max_element(map.data.begin(), map.data.end());
  const auto flat = static_cast<std::size_t>(it - map.data.begin());
  return {flat / map.cols, flat % map.cols};
}

PeakComparison metric_peak(const Heatmap& clean, const Heatmap& processed) {
  if (clean.rows != processed.rows || clean.cols != processed.cols) {
    throw std::invalid_argument("metric_peak: heatmap dimensions differ");
  }
  const auto [r0, c0] = heatmap_argmax(clean);
  const auto [r1, c1] = heatmap_argmax(processed);
  const double dr = static_cast<double>(r0) - static_cast<double>(r1);
  const double dc = static_cast<double>(c0) - static_cast<double>(c1);
  return {r0 == r1 && c0 == c1, std::sqrt(dr * dr + dc * dc)};
}

double metric_chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("metric_chamfer: empty point cloud");
  auto mean_nearest = [](const PointCloud& from, const PointCloud& to) {
    double total = 0.0;
    for (const RadarPoint& p : from.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const RadarPoint& q : to.points) {
        const double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      total += std::sqrt(best);
    }
    return total / static_cast<double>(from.size());
  };
  return 0.5 * (mean_nearest(a, b) + mean_nearest(b, a));
}

Heatmap process_cloud(const PointCloud& cloud, const GridSpec& grid, Pipeline pipeline, const Projector& projector) {
  switch (pipeline) {
    case Pipeline::Raw: return bev_project(voxelize(cloud, grid).grid);
    case Pipeline::GaussianPlanar:
      return bev_project(gaussian_expansion(cloud, grid, projector, ExponentMode::PlanarXY));
    case Pipeline::GaussianIsotropic:
      return bev_project(gaussian_expansion(cloud, grid, projector, ExponentMode::Isotropic3D));
  }
  throw std::logic_error("unhandled pipeline");
}

BenchReport run_sweep(const SweepConfig& cfg, const SweepOptions& options) {
  cfg.validate();
  std::vector<WorkItem> items;
  for (std::size_t c = 0; c < cfg.corruptions.size(); ++c) {
    for (double level : cfg.levels.at(cfg.corruptions[c].kind)) {
      for (std::size_t r = 0; r < cfg.replicates; ++r) {
        for (Pipeline p : cfg.pipelines) items.push_back({c, level, r, p});
      }
    }
  }
  BenchReport report;
  report.rows.resize(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < items.size(); i = next.fetch_add(1)) {
      report.rows[i] = run_row(cfg, items[i], options.keep_heatmaps);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, items.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return report;
}

std::string report_csv(const BenchReport& report, bool include_timing) {
  std::ostringstream out;
  out << "kind,level,replicate,pipeline,snr_before,snr_after,peak_consistent,peak_l2_cells,chamfer_m,"
         "points_in,points_out,wall_ms,error\n";
  for (const BenchRow& r : report.rows) {
    out << to_string(r.kind) << ',' << format_double(r.level) << ',' << r.replicate << ',' << to_string(r.pipeline)
        << ',' << format_double(r.snr_before) << ',' << format_double(r.snr_after) << ','
        << (r.peak_consistent ? "true" : "false") << ',' << format_double(r.peak_l2_cells) << ','
        << format_double(r.chamfer_m) << ',' << r.points_in << ',' << r.points_out << ','
        << format_double(include_timing ? r.wall_ms : 0.0) << ',' << csv_escape(r.error) << '\n';
  }
  return out.str();
}

void write_report_csv(const std::filesystem::path& path, const BenchReport& report, bool include_timing) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << report_csv(report, include_timing);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

PnmImage heatmap_to_pgm(const Heatmap& map) {
  PnmImage img{map.cols, map.rows, 1, std::vector<std::uint8_t>(map.data.size(), 0)};
  if (map.data.empty()) return img;
  const auto [lo, hi] = std::minmax_element(map.data.begin(), map.data.end());
  const double span = *hi - *lo;
  if (!(span > 0.0)) return img;
  for (std::size_t i = 0; i < map.data.size(); ++i) {
    const double scaled = std::floor(255.0 * (map.data[i] - *lo) / span);
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
  }
  return img;
}

void emit_heatmap(const Heatmap& map, const std::filesystem::path& path) { write_pnm(path, heatmap_to_pgm(map)); }

std::vector<ManifestEntry> gen_manifest(std::size_t count, double clean_ratio, std::uint64_t seed) {
  if (!(clean_ratio >= 0.0 && clean_ratio <= 1.0)) throw ConfigError("clean ratio must lie in [0, 1]");
  const auto noisy = static_cast<std::size_t>(std::llround(static_cast<double>(count) * (1.0 - clean_ratio)));
  Rng rng(seed);
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  for (std::size_t i = 0; i < noisy; ++i) std::swap(order[i], order[i + rng.below(count - i)]);

  std::vector<ManifestEntry> entries(count);
  for (std::size_t i = 0; i < count; ++i) {
    entries[i].index = i;
    entries[i].scene_seed = hash_combine(seed, i);
  }
  for (std::size_t n = 0; n < noisy; ++n) {
    ManifestEntry& e = entries[order[n]];
    Rng entry_rng(e.scene_seed, 2);
    e.noisy = true;
    e.radar_kind = kBenchmarkKinds[entry_rng.below(4)];
    if (is_sigma_kind(*e.radar_kind)) {
      e.radar_level = sample_sigma(entry_rng);
    } else {
      e.radar_level = static_cast<double>(1 + entry_rng.below(constants::kDefaultBeamCount / 2));
    }
    e.image = draw_degradation(ImageCorruptionSpec{}, entry_rng);
  }
  return entries;
}

void write_manifest_csv(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "index,scene_seed,noisy,radar_kind,radar_level,image_kind,image_level,image_gamma\n";
  for (const ManifestEntry& e : entries) {
    out << e.index << ',' << e.scene_seed << ',' << (e.noisy ? 1 : 0) << ',';
    if (e.noisy) {
      out << to_string(*e.radar_kind) << ',' << format_double(e.radar_level) << ',' << to_string(e.image->kind) << ','
          << to_string(e.image->level) << ','
          << (e.image->kind == ImageDegradation::LowLight ? format_double(e.image->gamma) : std::string());
    } else {
      out << ",,,,";
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace rcr
