#pragma once

#include <cmath>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "rcr/core_types.hpp"
#include "rcr/rng.hpp"

namespace testsupport {

// Fresh per-test scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rcr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline rcr::PointCloud random_cloud(rcr::Rng& rng, std::size_t n, double extent = 40.0) {
  rcr::PointCloud c;
  c.frame_id = "f";
  for (std::size_t i = 0; i < n; ++i) {
    c.points.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-4.0, 2.0),
                        rng.uniform(0.0, 10.0), rng.uniform(-5.0, 5.0)});
  }
  return c;
}

inline double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Sample standard deviation, two-pass.
inline double stddev(const std::vector<double>& xs) {
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// Box membership via the box's corner polygon: inside iff on the inner side of
// all four edges (cross products) and within the vertical half-extent.
inline bool polygon_membership(double x, double y, double z, const rcr::BoxAnnotation& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = b.length / 2, hw = b.width / 2;
  const double local[4][2] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
  double corner[4][2];
  for (int i = 0; i < 4; ++i) {
    corner[i][0] = b.center.x + c * local[i][0] - s * local[i][1];
    corner[i][1] = b.center.y + s * local[i][0] + c * local[i][1];
  }
  for (int i = 0; i < 4; ++i) {
    const auto& p = corner[i];
    const auto& q = corner[(i + 1) % 4];
    const double cross = (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0]);
    if (cross < 0) return false;
  }
  return std::abs(z - b.center.z) <= b.height / 2;
}

}  // namespace testsupport
