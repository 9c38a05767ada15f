#include "rcr/voxel_3dge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "binary_io.hpp"

namespace rcr {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void require_finite(double rcs, double v) {
  if (!std::isfinite(rcs) || !std::isfinite(v)) throw std::invalid_argument("project_params: non-finite input");
}

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

template <std::size_t N>
void read_array(const nlohmann::json& arr, const char* name, std::array<double, N>& out) {
  if (!arr.is_array() || arr.size() != N) throw ConfigError(std::string("projector weights: bad shape for ") + name);
  for (std::size_t i = 0; i < N; ++i) out[i] = arr[i].get<double>();
}

void require_same_spec(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) throw std::invalid_argument(std::string(what) + ": grid specs differ");
}

}  // namespace

void KernelParams::validate() const {
  if (lambda != 1 && lambda != 3 && lambda != 5) throw std::invalid_argument("kernel lambda must be 1, 3 or 5");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("kernel sigma must be positive");
}

ProjectorWeights load_projector_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open projector weights " + path.string());
  ProjectorWeights w;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [key, value] : j.items()) {
      if (key != "w1" && key != "b1" && key != "w2" && key != "b2") {
        throw ConfigError("projector weights: unknown field '" + key + "'");
      }
    }
    const auto& w1 = j.at("w1");
    const auto& w2 = j.at("w2");
    if (!w1.is_array() || w1.size() != 8 || !w2.is_array() || w2.size() != 4) {
      throw ConfigError("projector weights: w1 must be 8x2 and w2 4x8");
    }
    for (std::size_t r = 0; r < 8; ++r) read_array(w1[r], "w1", w.w1[r]);
    for (std::size_t r = 0; r < 4; ++r) read_array(w2[r], "w2", w.w2[r]);
    read_array(j.at("b1"), "b1", w.b1);
    read_array(j.at("b2"), "b2", w.b2);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("projector weights " + path.string() + ": " + e.what());
  }
  return w;
}

RcsQuartiles rcs_quartiles(const PointCloud& cloud) {
  if (cloud.empty()) return {};
  std::vector<double> rcs;
  rcs.reserve(cloud.size());
  for (const RadarPoint& p : cloud.points) rcs.push_back(p.rcs);
  std::sort(rcs.begin(), rcs.end());
  return {percentile(rcs, 0.25), percentile(rcs, 0.75)};
}

KernelParams project_params(double rcs, double v, const ProjectorWeights& w) {
  require_finite(rcs, v);
  std::array<double, 8> hidden{};
  for (std::size_t i = 0; i < 8; ++i) {
    hidden[i] = std::max(0.0, w.w1[i][0] * rcs + w.w1[i][1] * v + w.b1[i]);
  }
  std::array<double, 4> out{};
  for (std::size_t o = 0; o < 4; ++o) {
    double acc = w.b2[o];
    for (std::size_t i = 0; i < 8; ++i) acc += w.w2[o][i] * hidden[i];
    out[o] = acc;
  }
  std::size_t best = 0;
  for (std::size_t o = 1; o < 3; ++o) {
    if (out[o] > out[best]) best = o;
  }
  return {constants::kKernelSizes[best], softplus(out[3]) + 0.1};
}

KernelParams project_params(double rcs, double v, const RcsQuartiles& q) {
  require_finite(rcs, v);
  const int lambda = rcs < q.q25 ? 5 : rcs < q.q75 ? 3 : 1;
  return {lambda, lambda / 3.0};
}

std::vector<KernelParams> params_for_cloud(const PointCloud& cloud, const Projector& projector) {
  std::vector<KernelParams> params;
  params.reserve(cloud.size());
  if (const auto* weights = std::get_if<ProjectorWeights>(&projector)) {
    for (const RadarPoint& p : cloud.points) params.push_back(project_params(p.rcs, p.v, *weights));
  } else {
    const RcsQuartiles q = rcs_quartiles(cloud);
    for (const RadarPoint& p : cloud.points) params.push_back(project_params(p.rcs, p.v, q));
  }
  return params;
}

std::string_view to_string(ExponentMode mode) noexcept {
  return mode == ExponentMode::PlanarXY ? "planar" : "isotropic";
}

Kernel build_kernel(const KernelParams& params, ExponentMode mode) {
  params.validate();
  Kernel kernel{params.lambda, {}};
  const int r = kernel.radius();
  kernel.weights.reserve(static_cast<std::size_t>(params.lambda * params.lambda * params.lambda));
  const double inv_two_var = 1.0 / (2.0 * params.sigma * params.sigma);
  double total = 0.0;
  for (int dx = -r; dx <= r; ++dx) {
    for (int dy = -r; dy <= r; ++dy) {
      for (int dz = -r; dz <= r; ++dz) {
        double dist2 = dx * dx + dy * dy;
        if (mode == ExponentMode::Isotropic3D) dist2 += dz * dz;
        const double w = std::exp(-dist2 * inv_two_var);
        kernel.weights.push_back(w);
        total += w;
      }
    }
  }
  for (double& w : kernel.weights) w /= total;
  return kernel;
}

VoxelizeResult voxelize(const PointCloud& cloud, const GridSpec& spec) {
  spec.validate();
  VoxelizeResult result{VoxelGrid(spec), 0};
  for (const RadarPoint& p : cloud.points) {
    const auto cell = voxel_index(spec, {p.x, p.y, p.z});
    if (!cell) {
      ++result.skipped;
      continue;
    }
    const std::size_t i = result.grid.flat_index(*cell);
    result.grid.rcs[i] += p.rcs;
    result.grid.vel[i] += p.v;
    ++result.grid.count[i];
  }
  return result;
}

VoxelGrid expand(const PointCloud& cloud, const GridSpec& spec, std::span<const KernelParams> params,
                 ExponentMode mode) {
  spec.validate();
  if (params.size() != cloud.size()) {
    throw std::invalid_argument("expand: " + std::to_string(params.size()) + " kernel params for " +
                                std::to_string(cloud.size()) + " points");
  }
  VoxelGrid grid(spec);
  const auto n = std::array<long, 3>{static_cast<long>(spec.nx()), static_cast<long>(spec.ny()),
                                     static_cast<long>(spec.nz())};
  for (std::size_t pi = 0; pi < cloud.size(); ++pi) {
    const RadarPoint& p = cloud.points[pi];
    const auto cell = voxel_index(spec, {p.x, p.y, p.z});
    if (!cell) continue;
    ++grid.count[grid.flat_index(*cell)];
    const Kernel kernel = build_kernel(params[pi], mode);
    const int r = kernel.radius();
    std::size_t k = 0;
    for (int dx = -r; dx <= r; ++dx) {
      for (int dy = -r; dy <= r; ++dy) {
        for (int dz = -r; dz <= r; ++dz, ++k) {
          const long ix = static_cast<long>(cell->ix) + dx;
          const long iy = static_cast<long>(cell->iy) + dy;
          const long iz = static_cast<long>(cell->iz) + dz;
          if (ix < 0 || iy < 0 || iz < 0 || ix >= n[0] || iy >= n[1] || iz >= n[2]) continue;
          const std::size_t i = grid.flat_index(
              {static_cast<std::size_t>(ix), static_cast<std::size_t>(iy), static_cast<std::size_t>(iz)});
          grid.rcs[i] += p.rcs * kernel.weights[k];
          grid.vel[i] += p.v * kernel.weights[k];
        }
      }
    }
  }
  return grid;
}

VoxelGrid merge_residual(const VoxelGrid& original, const VoxelGrid& expanded) {
  require_same_spec(original.spec, expanded.spec, "merge_residual");
  VoxelGrid out = original;
  for (std::size_t i = 0; i < out.rcs.size(); ++i) {
    out.rcs[i] += expanded.rcs[i];
    out.vel[i] += expanded.vel[i];
  }
  return out;
}

Heatmap bev_project(const VoxelGrid& grid) {
  const std::size_t nx = grid.spec.nx(), ny = grid.spec.ny(), nz = grid.spec.nz();
  Heatmap map(nx, ny);
  for (std::size_t ix = 0; ix < nx; ++ix) {
    for (std::size_t iy = 0; iy < ny; ++iy) {
      double acc = 0.0;
      const std::size_t base = (ix * ny + iy) * nz;
      for (std::size_t iz = 0; iz < nz; ++iz) acc += std::abs(grid.rcs[base + iz]);
      map.at(ix, iy) = acc;
    }
  }
  return map;
}

VoxelGrid gaussian_expansion(const PointCloud& cloud, const GridSpec& spec, const Projector& projector,
                             ExponentMode mode) {
  const VoxelGrid original = voxelize(cloud, spec).grid;
  const auto params = params_for_cloud(cloud, projector);
  return merge_residual(original, expand(cloud, spec, params, mode));
}

void write_voxel_grid(const std::filesystem::path& path, const VoxelGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("RCVG", 4);
  detail::put_u32(out, kVoxelGridFormatVersion);
  for (std::size_t n : grid.spec.cells) detail::put_u32(out, static_cast<std::uint32_t>(n));
  for (const AxisRange& r : {grid.spec.x_range, grid.spec.y_range, grid.spec.z_range}) {
    detail::put_f64(out, r.min);
    detail::put_f64(out, r.max);
  }
  for (double v : grid.rcs) detail::put_f64(out, v);
  for (double v : grid.vel) detail::put_f64(out, v);
  for (std::uint32_t c : grid.count) detail::put_u32(out, c);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

VoxelGrid read_voxel_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  detail::expect_magic(in, "RCVG");
  const std::uint32_t version = detail::get_u32(in);
  if (version != kVoxelGridFormatVersion) throw std::runtime_error("unsupported RCVG version " + std::to_string(version));
  GridSpec spec;
  for (auto& n : spec.cells) n = detail::get_u32(in);
  for (AxisRange* r : {&spec.x_range, &spec.y_range, &spec.z_range}) {
    r->min = detail::get_f64(in);
    r->max = detail::get_f64(in);
  }
  spec.validate();
  VoxelGrid grid(spec);
  for (double& v : grid.rcs) v = detail::get_f64(in);
  for (double& v : grid.vel) v = detail::get_f64(in);
  for (std::uint32_t& c : grid.count) c = detail::get_u32(in);
  return grid;
}

}  // namespace rcr
