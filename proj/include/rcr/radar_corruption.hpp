#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "rcr/core_types.hpp"

namespace rcr {

/// Radar corruption families. Benchmark labels: C1 spurious points,
/// C2 non-positional disturbance, C3 key-point missing by beam loss,
/// C4 point shifting. KeyPointMissing is point-count based removal.
enum class CorruptionKind { KeyPointMissing, SpuriousPoints, PointShifting, NonPositionalDisturbance, BeamDrop };

enum class SpuriousMode { PointRelated, Random };

std::string_view to_string(CorruptionKind kind) noexcept;
std::string_view to_string(SpuriousMode mode) noexcept;
/// Accepts the enum name or the benchmark label (C1..C4), case-sensitive.
CorruptionKind parse_corruption_kind(std::string_view text);
SpuriousMode parse_spurious_mode(std::string_view text);
/// "C1".."C4" for the benchmark families, empty for KeyPointMissing.
std::string_view benchmark_label(CorruptionKind kind) noexcept;

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::SpuriousPoints;
  int gamma = 0;                                   // KeyPointMissing: 0 whole cloud, 1 in-box
  SpuriousMode mode = SpuriousMode::PointRelated;  // SpuriousPoints
  std::optional<double> sigma;                     // drawn from U(1, 50) when absent
  std::size_t drop_count = 1;                      // KeyPointMissing k / BeamDrop beams
  double spurious_ratio = constants::kDefaultSpuriousRatio;
  std::uint64_t seed = 0;

  friend bool operator==(const CorruptionSpec&, const CorruptionSpec&) = default;
};

/// Strict JSON mapping; unknown fields and bad values raise ConfigError.
CorruptionSpec corruption_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CorruptionSpec& spec);

double sample_sigma(Rng& rng);

/// Removes k points, either uniformly from the whole cloud (gamma 0, k <= floor(|p|/2))
/// or from points inside any box (gamma 1, k <= 8, at most the in-box count).
PointCloud key_point_missing(const PointCloud& cloud, const std::vector<BoxAnnotation>& boxes, int gamma,
                             std::size_t k, Rng& rng);

/// Number of points spurious_points appends: max(1, round(ratio * |p|)).
std::size_t spurious_count(std::size_t cloud_size, double ratio);

PointCloud spurious_points(const PointCloud& cloud, SpuriousMode mode, double spurious_ratio, double sigma,
                           const GridSpec& bounds, Rng& rng);

/// Gaussian offsets on (x, y, z) only.
PointCloud point_shift(const PointCloud& cloud, double sigma, Rng& rng);

/// Gaussian offsets on (rcs, v) only.
PointCloud non_positional_disturbance(const PointCloud& cloud, double sigma, Rng& rng);

/// Sector index in [0, total_beams) of azimuth atan2(y, x) over [-pi, pi).
std::size_t beam_sector(double x, double y, std::size_t total_beams) noexcept;

PointCloud beam_drop(const PointCloud& cloud, std::size_t total_beams, std::size_t drop_count, Rng& rng);

/// Dispatches on spec.kind. `level` overrides sigma (sigma kinds) or
/// drop_count (count kinds) when given.
PointCloud apply_corruption(const CorruptionSpec& spec, const PointCloud& cloud,
                            const std::vector<BoxAnnotation>& boxes, const GridSpec& bounds, Rng& rng,
                            std::optional<double> level = std::nullopt);

/// True for kinds whose level is a Gaussian sigma.
bool is_sigma_kind(CorruptionKind kind) noexcept;

}  // namespace rcr
