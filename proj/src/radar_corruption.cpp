#include "rcr/radar_corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace rcr {

namespace {

/// First `k` entries of the returned vector are a uniform k-subset of [0, n),
/// drawn by a partial Fisher-Yates shuffle.
std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
  }
  order.resize(k);
  return order;
}

PointCloud remove_indices(const PointCloud& cloud, const std::vector<std::size_t>& removed) {
  std::vector<bool> drop(cloud.size(), false);
  for (std::size_t i : removed) drop[i] = true;
  PointCloud out{{}, cloud.frame_id};
  out.points.reserve(cloud.size() - removed.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!drop[i]) out.points.push_back(cloud.points[i]);
  }
  return out;
}

void require_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be positive and finite");
}

// Perturbs a coordinate by N(0, sigma^2) and keeps the result inside `range`
// by redrawing; after a bounded number of attempts the draw is clamped.
double perturb_within(double base, double sigma, const AxisRange& range, Rng& rng) {
  constexpr int kMaxAttempts = 64;
  double value = base;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    value = base + sigma * rng.normal();
    if (range.contains(value)) return value;
  }
  return std::clamp(value, range.min, range.max);
}

}  // namespace

std::string_view to_string(CorruptionKind kind) noexcept {
  switch (kind) {
    case CorruptionKind::KeyPointMissing: return "KeyPointMissing";
    case CorruptionKind::SpuriousPoints: return "SpuriousPoints";
    case CorruptionKind::PointShifting: return "PointShifting";
    case CorruptionKind::NonPositionalDisturbance: return "NonPositionalDisturbance";
    case CorruptionKind::BeamDrop: return "BeamDrop";
  }
  return "?";
}

std::string_view to_string(SpuriousMode mode) noexcept {
  return mode == SpuriousMode::PointRelated ? "PointRelated" : "Random";
}

std::string_view benchmark_label(CorruptionKind kind) noexcept {
  switch (kind) {
    case CorruptionKind::SpuriousPoints: return "C1";
    case CorruptionKind::NonPositionalDisturbance: return "C2";
    case CorruptionKind::BeamDrop: return "C3";
    case CorruptionKind::PointShifting: return "C4";
    case CorruptionKind::KeyPointMissing: return "";
  }
  return "";
}

CorruptionKind parse_corruption_kind(std::string_view text) {
  for (auto kind : {CorruptionKind::KeyPointMissing, CorruptionKind::SpuriousPoints, CorruptionKind::PointShifting,
                    CorruptionKind::NonPositionalDisturbance, CorruptionKind::BeamDrop}) {
    if (text == to_string(kind)) return kind;
    if (!benchmark_label(kind).empty() && text == benchmark_label(kind)) return kind;
  }
  throw ConfigError("unknown corruption kind '" + std::string(text) + "'");
}

SpuriousMode parse_spurious_mode(std::string_view text) {
  if (text == "PointRelated") return SpuriousMode::PointRelated;
  if (text == "Random") return SpuriousMode::Random;
  throw ConfigError("unknown spurious mode '" + std::string(text) + "'");
}

bool is_sigma_kind(CorruptionKind kind) noexcept {
  return kind == CorruptionKind::SpuriousPoints || kind == CorruptionKind::PointShifting ||
         kind == CorruptionKind::NonPositionalDisturbance;
}

CorruptionSpec corruption_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("corruption spec must be a JSON object");
  CorruptionSpec spec;
  bool has_kind = false;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "kind") {
        spec.kind = parse_corruption_kind(value.get<std::string>());
        has_kind = true;
      } else if (key == "gamma") {
        const int gamma = value.get<int>();
        if (gamma != 0 && gamma != 1) throw ConfigError("gamma must be 0 or 1");
        spec.gamma = gamma;
      } else if (key == "mode") {
        spec.mode = parse_spurious_mode(value.get<std::string>());
      } else if (key == "sigma") {
        if (value.is_null()) {
          spec.sigma.reset();
        } else {
          const double sigma = value.get<double>();
          if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be positive");
          spec.sigma = sigma;
        }
      } else if (key == "drop_count") {
        if (!value.is_number_unsigned()) throw ConfigError("drop_count must be a non-negative integer");
        spec.drop_count = value.get<std::size_t>();
      } else if (key == "spurious_ratio") {
        const double ratio = value.get<double>();
        if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("spurious_ratio must lie in (0, 1]");
        spec.spurious_ratio = ratio;
      } else if (key == "seed") {
        if (!value.is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
        spec.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown corruption field '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("corruption field '" + key + "': " + e.what());
    }
  }
  if (!has_kind) throw ConfigError("corruption spec requires 'kind'");
  return spec;
}

nlohmann::json to_json(const CorruptionSpec& spec) {
  nlohmann::json j;
  j["kind"] = std::string(to_string(spec.kind));
  j["gamma"] = spec.gamma;
  j["mode"] = std::string(to_string(spec.mode));
  j["sigma"] = spec.sigma ? nlohmann::json(*spec.sigma) : nlohmann::json(nullptr);
  j["drop_count"] = spec.drop_count;
  j["spurious_ratio"] = spec.spurious_ratio;
  j["seed"] = spec.seed;
  return j;
}

double sample_sigma(Rng& rng) { return rng.uniform(constants::kSigmaMin, constants::kSigmaMax); }

PointCloud key_point_missing(const PointCloud& cloud, const std::vector<BoxAnnotation>& boxes, int gamma,
                             std::size_t k, Rng& rng) {
  if (cloud.empty()) throw std::invalid_argument("key_point_missing: empty cloud");
  if (gamma != 0 && gamma != 1) throw std::invalid_argument("key_point_missing: gamma must be 0 or 1");
  const std::size_t max_k = gamma == 0 ? cloud.size() / 2 : constants::kMaxInBoxRemoval;
  if (k < 1 || k > max_k) {
    throw std::invalid_argument("key_point_missing: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(max_k) + "]");
  }
  if (gamma == 0) return remove_indices(cloud, choose_without_replacement(cloud.size(), k, rng));

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (in_any_box(cloud.points[i], boxes)) eligible.push_back(i);
  }
  const std::size_t remove = std::min(k, eligible.size());
  std::vector<std::size_t> removed;
  removed.reserve(remove);
  for (std::size_t pick : choose_without_replacement(eligible.size(), remove, rng)) removed.push_back(eligible[pick]);
  return remove_indices(cloud, removed);
}

std::size_t spurious_count(std::size_t cloud_size, double ratio) {
  const auto m = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(cloud_size)));
  return std::max<std::size_t>(1, m);
}

PointCloud spurious_points(const PointCloud& cloud, SpuriousMode mode, double spurious_ratio, double sigma,
                           const GridSpec& bounds, Rng& rng) {
  require_sigma(sigma);
  if (!(spurious_ratio > 0.0 && spurious_ratio <= 1.0)) {
    throw std::invalid_argument("spurious_points: ratio must lie in (0, 1]");
  }
  if (mode == SpuriousMode::PointRelated && cloud.empty()) {
    throw std::invalid_argument("spurious_points: point-related mode needs a non-empty cloud");
  }
  const std::size_t m = spurious_count(cloud.size(), spurious_ratio);
  PointCloud out = cloud;
  out.points.reserve(cloud.size() + m);

  if (mode == SpuriousMode::PointRelated) {
    for (std::size_t i = 0; i < m; ++i) {
      const RadarPoint& base = cloud.points[rng.below(cloud.size())];
      RadarPoint p;
      p.x = base.x + sigma * rng.normal();
      p.y = base.y + sigma * rng.normal();
      p.z = base.z + sigma * rng.normal();
      p.rcs = base.rcs + sigma * rng.normal();
      p.v = base.v + sigma * rng.normal();
      out.points.push_back(p);
    }
    return out;
  }

  AxisRange rcs_range{0.0, 0.0};
  AxisRange v_range{0.0, 0.0};
  if (!cloud.empty()) {
    const auto [rcs_lo, rcs_hi] = std::minmax_element(
        cloud.points.begin(), cloud.points.end(), [](const auto& a, const auto& b) { return a.rcs < b.rcs; });
    const auto [v_lo, v_hi] = std::minmax_element(cloud.points.begin(), cloud.points.end(),
                                                  [](const auto& a, const auto& b) { return a.v < b.v; });
    rcs_range = {rcs_lo->rcs, rcs_hi->rcs};
    v_range = {v_lo->v, v_hi->v};
  }
  for (std::size_t i = 0; i < m; ++i) {
    RadarPoint p;
    p.x = perturb_within(rng.uniform(bounds.x_range.min, bounds.x_range.max), sigma, bounds.x_range, rng);
    p.y = perturb_within(rng.uniform(bounds.y_range.min, bounds.y_range.max), sigma, bounds.y_range, rng);
    p.z = perturb_within(rng.uniform(bounds.z_range.min, bounds.z_range.max), sigma, bounds.z_range, rng);
    p.rcs = rng.uniform(rcs_range.min, rcs_range.max) + sigma * rng.normal();
    p.v = rng.uniform(v_range.min, v_range.max) + sigma * rng.normal();
    out.points.push_back(p);
  }
  return out;
}

PointCloud point_shift(const PointCloud& cloud, double sigma, Rng& rng) {
  require_sigma(sigma);
  PointCloud out = cloud;
  for (RadarPoint& p : out.points) {
    p.x += sigma * rng.normal();
    p.y += sigma * rng.normal();
    p.z += sigma * rng.normal();
  }
  return out;
}

PointCloud non_positional_disturbance(const PointCloud& cloud, double sigma, Rng& rng) {
  require_sigma(sigma);
  PointCloud out = cloud;
  for (RadarPoint& p : out.points) {
    p.rcs += sigma * rng.normal();
    p.v += sigma * rng.normal();
  }
  return out;
}

std::size_t beam_sector(double x, double y, std::size_t total_beams) noexcept {
  const double azimuth = std::atan2(y, x);
  const double fraction = (azimuth + std::numbers::pi) / (2.0 * std::numbers::pi);
  auto sector = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total_beams)));
  // atan2 may return +pi, which is the same direction as -pi.
  return sector >= total_beams ? 0 : sector;
}

PointCloud beam_drop(const PointCloud& cloud, std::size_t total_beams, std::size_t drop_count, Rng& rng) {
  if (total_beams == 0) throw std::invalid_argument("beam_drop: total_beams must be positive");
  if (drop_count > total_beams) {
    throw std::invalid_argument("beam_drop: drop_count " + std::to_string(drop_count) + " exceeds " +
                                std::to_string(total_beams) + " beams");
  }
  std::vector<bool> dropped(total_beams, false);
  for (std::size_t s : choose_without_replacement(total_beams, drop_count, rng)) dropped[s] = true;
  PointCloud out{{}, cloud.frame_id};
  for (const RadarPoint& p : cloud.points) {
    if (!dropped[beam_sector(p.x, p.y, total_beams)]) out.points.push_back(p);
  }
  return out;
}

PointCloud apply_corruption(const CorruptionSpec& spec, const PointCloud& cloud,
                            const std::vector<BoxAnnotation>& boxes, const GridSpec& bounds, Rng& rng,
                            std::optional<double> level) {
  if (is_sigma_kind(spec.kind)) {
    const double sigma = level ? *level : spec.sigma ? *spec.sigma : sample_sigma(rng);
    switch (spec.kind) {
      case CorruptionKind::SpuriousPoints:
        return spurious_points(cloud, spec.mode, spec.spurious_ratio, sigma, bounds, rng);
      case CorruptionKind::PointShifting: return point_shift(cloud, sigma, rng);
      default: return non_positional_disturbance(cloud, sigma, rng);
    }
  }
  std::size_t count = spec.drop_count;
  if (level) {
    if (!(*level >= 0.0) || *level != std::floor(*level)) {
      throw std::invalid_argument("count level must be a non-negative integer");
    }
    count = static_cast<std::size_t>(*level);
  }
  if (spec.kind == CorruptionKind::BeamDrop) return beam_drop(cloud, constants::kDefaultBeamCount, count, rng);
  return key_point_missing(cloud, boxes, spec.gamma, count, rng);
}

}  // namespace rcr
