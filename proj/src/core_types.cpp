#include "rcr/core_types.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string_view>
#include <unordered_map>

namespace rcr {

bool RadarPoint::is_finite() const noexcept {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && std::isfinite(rcs) &&
         std::isfinite(v);
}

void BoxAnnotation::validate() const {
  if (!(length > 0.0) || !(width > 0.0) || !(height > 0.0)) {
    throw std::invalid_argument("box size components must be strictly positive");
  }
  if (!(yaw >= -std::numbers::pi && yaw <= std::numbers::pi)) {
    throw std::invalid_argument("box yaw must lie in [-pi, pi]");
  }
}

Vec3 GridSpec::cell_size() const noexcept {
  return {x_range.extent() / static_cast<double>(nx()), y_range.extent() / static_cast<double>(ny()),
          z_range.extent() / static_cast<double>(nz())};
}

Vec3 GridSpec::cell_center(const CellIndex& cell) const noexcept {
  const Vec3 size = cell_size();
  return {x_range.min + (static_cast<double>(cell.ix) + 0.5) * size.x,
          y_range.min + (static_cast<double>(cell.iy) + 0.5) * size.y,
          z_range.min + (static_cast<double>(cell.iz) + 0.5) * size.z};
}

bool GridSpec::contains(const Vec3& p) const noexcept {
  return x_range.contains(p.x) && y_range.contains(p.y) && z_range.contains(p.z);
}

void GridSpec::validate() const {
  const AxisRange* ranges[] = {&x_range, &y_range, &z_range};
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const AxisRange& r = *ranges[axis];
    if (!std::isfinite(r.min) || !std::isfinite(r.max) || !(r.max > r.min)) {
      throw std::invalid_argument("grid range max must exceed min on every axis");
    }
    if (cells[axis] == 0) {
      throw std::invalid_argument("grid cell counts must be positive");
    }
  }
}

GridSpec default_grid() { return GridSpec{}; }

VoxelGrid::VoxelGrid(const GridSpec& grid_spec)
    : spec(grid_spec),
      rcs(grid_spec.cell_count(), 0.0),
      vel(grid_spec.cell_count(), 0.0),
      count(grid_spec.cell_count(), 0U) {}

bool point_in_footprint(double x, double y, const BoxAnnotation& box) noexcept {
  const double dx = x - box.center.x;
  const double dy = y - box.center.y;
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double local_x = c * dx + s * dy;
  const double local_y = -s * dx + c * dy;
  return std::abs(local_x) <= 0.5 * box.length && std::abs(local_y) <= 0.5 * box.width;
}

bool point_in_box(const RadarPoint& pt, const BoxAnnotation& box) noexcept {
  return std::abs(pt.z - box.center.z) <= 0.5 * box.height && point_in_footprint(pt.x, pt.y, box);
}

bool in_any_box(const RadarPoint& pt, const std::vector<BoxAnnotation>& boxes) noexcept {
  return std::any_of(boxes.begin(), boxes.end(),
                     [&](const BoxAnnotation& b) { return point_in_box(pt, b); });
}

std::optional<std::size_t> axis_index(const AxisRange& range, std::size_t cells,
                                      double value) noexcept {
  if (!(value >= range.min && value <= range.max)) return std::nullopt;
  // Scale before dividing so exact multiples of the cell size bin exactly.
  const double scaled = (value - range.min) * static_cast<double>(cells) / range.extent();
  const auto index = static_cast<std::size_t>(std::floor(scaled));
  return std::min(index, cells - 1);
}

std::optional<CellIndex> voxel_index(const GridSpec& spec, const Vec3& p) noexcept {
  const auto ix = axis_index(spec.x_range, spec.nx(), p.x);
  const auto iy = axis_index(spec.y_range, spec.ny(), p.y);
  const auto iz = axis_index(spec.z_range, spec.nz(), p.z);
  if (!ix || !iy || !iz) return std::nullopt;
  return CellIndex{*ix, *iy, *iz};
}

std::string format_double(double value) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, result.ptr);
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

double parse_double(std::string_view text, const std::filesystem::path& path, std::size_t line_no) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  double value = 0.0;
  const auto result = std::from_chars(text.data(), text.data() + text.size(), value);
  if (result.ec != std::errc{} || result.ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad number '" +
                             std::string(text) + "'");
  }
  return value;
}

template <typename RowFn>
void read_csv(const std::filesystem::path& path, std::string_view expected_header,
              std::size_t field_count, RowFn&& on_row) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (line != expected_header) {
        throw std::runtime_error(path.string() + ": expected header '" +
                                 std::string(expected_header) + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != field_count) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(field_count) + " fields");
    }
    std::vector<double> values;
    values.reserve(field_count - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) values.push_back(parse_double(fields[i], path, line_no));
    on_row(std::string(fields[0]), values);
  }
  if (!header_seen) throw std::runtime_error(path.string() + ": missing header");
}

constexpr std::string_view kCloudHeader = "frame_id,x,y,z,rcs,v";
constexpr std::string_view kBoxHeader = "frame_id,cx,cy,cz,l,w,h,yaw";

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void append_cloud_rows(std::ostream& out, const PointCloud& cloud) {
  for (const RadarPoint& p : cloud.points) {
    out << cloud.frame_id << ',' << format_double(p.x) << ',' << format_double(p.y) << ','
        << format_double(p.z) << ',' << format_double(p.rcs) << ',' << format_double(p.v) << '\n';
  }
}

}  // namespace

std::vector<PointCloud> read_clouds_csv(const std::filesystem::path& path) {
  std::vector<PointCloud> clouds;
  std::unordered_map<std::string, std::size_t> by_frame;
  read_csv(path, kCloudHeader, 6, [&](std::string frame, const std::vector<double>& v) {
    auto [it, inserted] = by_frame.try_emplace(frame, clouds.size());
    if (inserted) clouds.push_back(PointCloud{{}, frame});
    clouds[it->second].points.push_back(RadarPoint{v[0], v[1], v[2], v[3], v[4]});
  });
  return clouds;
}

PointCloud read_cloud_csv(const std::filesystem::path& path) {
  auto clouds = read_clouds_csv(path);
  if (clouds.empty()) return PointCloud{};
  if (clouds.size() > 1) {
    throw std::runtime_error(path.string() + ": expected a single frame, found " +
                             std::to_string(clouds.size()));
  }
  return std::move(clouds.front());
}

void write_cloud_csv(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = open_for_write(path);
  out << kCloudHeader << '\n';
  append_cloud_rows(out, cloud);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_clouds_csv(const std::filesystem::path& path, const std::vector<PointCloud>& clouds) {
  auto out = open_for_write(path);
  out << kCloudHeader << '\n';
  for (const auto& cloud : clouds) append_cloud_rows(out, cloud);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<BoxAnnotation> read_boxes_csv(const std::filesystem::path& path,
                                          const std::optional<std::string>& frame_id) {
  std::vector<BoxAnnotation> boxes;
  read_csv(path, kBoxHeader, 8, [&](std::string frame, const std::vector<double>& v) {
    if (frame_id && frame != *frame_id) return;
    BoxAnnotation box{{v[0], v[1], v[2]}, v[3], v[4], v[5], v[6]};
    box.validate();
    boxes.push_back(box);
  });
  return boxes;
}

void write_boxes_csv(const std::filesystem::path& path, const std::string& frame_id,
                     const std::vector<BoxAnnotation>& boxes) {
  auto out = open_for_write(path);
  out << kBoxHeader << '\n';
  for (const BoxAnnotation& b : boxes) {
    out << frame_id << ',' << format_double(b.center.x) << ',' << format_double(b.center.y) << ','
        << format_double(b.center.z) << ',' << format_double(b.length) << ','
        << format_double(b.width) << ',' << format_double(b.height) << ','
        << format_double(b.yaw) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace rcr
