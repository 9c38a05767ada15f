#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "rcr/core_types.hpp"

namespace rcr {

/// Per-point expansion parameters: odd kernel side (voxels) and Gaussian spread (voxels).
struct KernelParams {
  int lambda = 1;
  double sigma = 1.0;

  /// Throws std::invalid_argument unless lambda is 1, 3 or 5 and sigma is positive and finite.
  void validate() const;
  friend bool operator==(const KernelParams&, const KernelParams&) = default;
};

/// Two-layer encoder (rcs, v) -> relu(8) -> (3 size logits, 1 raw sigma).
struct ProjectorWeights {
  std::array<std::array<double, 2>, 8> w1{};
  std::array<double, 8> b1{};
  std::array<std::array<double, 8>, 4> w2{};
  std::array<double, 4> b2{};
};

/// JSON object with arrays "w1" (8x2), "b1" (8), "w2" (4x8), "b2" (4).
ProjectorWeights load_projector_weights(const std::filesystem::path& path);

/// RCS quartiles of a cloud, used by the weight-free projector.
struct RcsQuartiles {
  double q25 = 0.0;
  double q75 = 0.0;
};

/// Linear-interpolated percentiles of the cloud's RCS values.
RcsQuartiles rcs_quartiles(const PointCloud& cloud);

/// Learned-style projection. Size logit ties resolve toward the smaller kernel.
KernelParams project_params(double rcs, double v, const ProjectorWeights& weights);

/// Heuristic projection: lambda 5 below q25, 3 below q75, else 1; sigma = lambda / 3.
KernelParams project_params(double rcs, double v, const RcsQuartiles& quartiles);

struct HeuristicProjector {};
using Projector = std::variant<HeuristicProjector, ProjectorWeights>;

std::vector<KernelParams> params_for_cloud(const PointCloud& cloud, const Projector& projector);

/// PlanarXY uses only dx and dy in the exponent; Isotropic3D adds dz.
enum class ExponentMode { PlanarXY, Isotropic3D };

std::string_view to_string(ExponentMode mode) noexcept;

/// Normalized lambda^3 weight cube, index ((dx + r) * lambda + (dy + r)) * lambda + (dz + r).
struct Kernel {
  int lambda = 1;
  std::vector<double> weights;

  int radius() const noexcept { return (lambda - 1) / 2; }
  double at(int dx, int dy, int dz) const {
    const int r = radius();
    return weights[static_cast<std::size_t>(((dx + r) * lambda + (dy + r)) * lambda + (dz + r))];
  }
};

Kernel build_kernel(const KernelParams& params, ExponentMode mode);

struct VoxelizeResult {
  VoxelGrid grid;
  std::size_t skipped = 0;  // points outside the grid
};

VoxelizeResult voxelize(const PointCloud& cloud, const GridSpec& spec);

/// Deposits each in-range point's rcs and v over its kernel footprint. Footprint
/// cells outside the grid are dropped without renormalization. The count field
/// matches voxelize.
VoxelGrid expand(const PointCloud& cloud, const GridSpec& spec, std::span<const KernelParams> params,
                 ExponentMode mode);

/// Element-wise rcs/vel sum; count comes from `original`.
VoxelGrid merge_residual(const VoxelGrid& original, const VoxelGrid& expanded);

/// Dense rows x cols real field, row-major.
struct Heatmap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Heatmap() = default;
  Heatmap(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  friend bool operator==(const Heatmap&, const Heatmap&) = default;
};

/// heatmap[ix, iy] = sum over iz of |rcs[ix, iy, iz]|. Rows are ix, columns iy.
Heatmap bev_project(const VoxelGrid& grid);

/// voxelize followed by merge_residual with the kernel expansion.
VoxelGrid gaussian_expansion(const PointCloud& cloud, const GridSpec& spec, const Projector& projector,
                             ExponentMode mode);

// Binary grid export: "RCVG", u32 version, u32 nx ny nz, f64 x/y/z min,max pairs,
// then rcs (f64), vel (f64), count (u32) in flat x-major order. Little-endian.
inline constexpr std::uint32_t kVoxelGridFormatVersion = 1;
void write_voxel_grid(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid read_voxel_grid(const std::filesystem::path& path);

}  // namespace rcr
