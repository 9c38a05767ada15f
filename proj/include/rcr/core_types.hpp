#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcr/constants.hpp"
#include "rcr/rng.hpp"

namespace rcr {

/// Invalid user-supplied configuration (maps to CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A radar return: position in meters, normalized RCS, Doppler speed in m/s.
struct RadarPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double rcs = 0.0;
  double v = 0.0;

  bool is_finite() const noexcept;
  friend bool operator==(const RadarPoint&, const RadarPoint&) = default;
};

struct PointCloud {
  std::vector<RadarPoint> points;
  std::string frame_id;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

/// Oriented 3D box; yaw rotates about +z.
struct BoxAnnotation {
  Vec3 center;
  double length = 1.0;  // along the box's local x
  double width = 1.0;   // along the box's local y
  double height = 1.0;
  double yaw = 0.0;

  /// Throws std::invalid_argument unless sizes are positive and yaw is in [-pi, pi].
  void validate() const;
  friend bool operator==(const BoxAnnotation&, const BoxAnnotation&) = default;
};

struct Scene {
  PointCloud cloud;
  std::vector<BoxAnnotation> boxes;
  std::uint64_t seed = 0;
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct AxisRange {
  double min = 0.0;
  double max = 1.0;
  double extent() const noexcept { return max - min; }
  bool contains(double value) const noexcept { return value >= min && value <= max; }
  friend bool operator==(const AxisRange&, const AxisRange&) = default;
};

struct CellIndex {
  std::size_t ix = 0;
  std::size_t iy = 0;
  std::size_t iz = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

/// Regular axis-aligned voxel lattice.
struct GridSpec {
  AxisRange x_range{constants::kRadarRangeMin, constants::kRadarRangeMax};
  AxisRange y_range{constants::kRadarRangeMin, constants::kRadarRangeMax};
  AxisRange z_range{constants::kDefaultZMin, constants::kDefaultZMax};
  std::array<std::size_t, 3> cells{constants::kBevCells, constants::kBevCells,
                                   constants::kDefaultZCells};

  std::size_t nx() const noexcept { return cells[0]; }
  std::size_t ny() const noexcept { return cells[1]; }
  std::size_t nz() const noexcept { return cells[2]; }
  std::size_t cell_count() const noexcept { return cells[0] * cells[1] * cells[2]; }
  Vec3 cell_size() const noexcept;
  /// Center of cell (ix, iy, iz) in meters.
  Vec3 cell_center(const CellIndex& cell) const noexcept;
  bool contains(const Vec3& position) const noexcept;

  /// Throws std::invalid_argument if any range is empty or any cell count is zero.
  void validate() const;
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Default BEV grid: [-51.2, 51.2] m planar, 128 x 128, z in [-5, 3] m with 1 m cells.
GridSpec default_grid();

/// Dense voxel fields, x-major: flat index = (ix * ny + iy) * nz + iz.
struct VoxelGrid {
  GridSpec spec;
  std::vector<double> rcs;
  std::vector<double> vel;
  std::vector<std::uint32_t> count;

  VoxelGrid() = default;
  explicit VoxelGrid(const GridSpec& grid_spec);

  std::size_t flat_index(const CellIndex& cell) const noexcept {
    return (cell.ix * spec.ny() + cell.iy) * spec.nz() + cell.iz;
  }
  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;
};

/// True iff the point lies inside the box (closed faces).
bool point_in_box(const RadarPoint& pt, const BoxAnnotation& box) noexcept;

/// Planar footprint test; z is ignored.
bool point_in_footprint(double x, double y, const BoxAnnotation& box) noexcept;

bool in_any_box(const RadarPoint& pt, const std::vector<BoxAnnotation>& boxes) noexcept;

/// Floor binning; positions outside the closed ranges give nullopt and
/// a coordinate equal to max falls in the last cell.
std::optional<std::size_t> axis_index(const AxisRange& range, std::size_t cells, double value) noexcept;
std::optional<CellIndex> voxel_index(const GridSpec& spec, const Vec3& position) noexcept;

// CSV I/O. Points: `frame_id,x,y,z,rcs,v`. Boxes: `frame_id,cx,cy,cz,l,w,h,yaw`.
// Doubles are written in shortest round-trip form.

/// All frames in first-appearance order.
std::vector<PointCloud> read_clouds_csv(const std::filesystem::path& path);
/// Single-frame file (or header-only, giving an empty cloud).
PointCloud read_cloud_csv(const std::filesystem::path& path);
void write_cloud_csv(const std::filesystem::path& path, const PointCloud& cloud);
void write_clouds_csv(const std::filesystem::path& path, const std::vector<PointCloud>& clouds);

std::vector<BoxAnnotation> read_boxes_csv(const std::filesystem::path& path,
                                          const std::optional<std::string>& frame_id = std::nullopt);
void write_boxes_csv(const std::filesystem::path& path, const std::string& frame_id,
                     const std::vector<BoxAnnotation>& boxes);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

}  // namespace rcr
