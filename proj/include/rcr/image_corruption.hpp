#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "rcr/core_types.hpp"
#include "rcr/pnm.hpp"

namespace rcr {

/// RGB image with samples in [0, 1], row-major with interleaved channels.
struct ImagePlane {
  std::size_t height = 0;
  std::size_t width = 0;
  static constexpr std::size_t channels = 3;
  std::vector<double> data;

  ImagePlane() = default;
  ImagePlane(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w * channels, fill) {}

  double& at(std::size_t row, std::size_t col, std::size_t ch) { return data[(row * width + col) * channels + ch]; }
  double at(std::size_t row, std::size_t col, std::size_t ch) const { return data[(row * width + col) * channels + ch]; }

  /// Throws std::invalid_argument on size mismatch or samples outside [0, 1].
  void validate() const;
  friend bool operator==(const ImagePlane&, const ImagePlane&) = default;
};

enum class WeatherKind { Rain, Snow, Fog };

struct DegradationMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;  // 1 broadcasts over RGB, or 3
  std::vector<double> data;
  WeatherKind kind = WeatherKind::Fog;

  double at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data[(row * width + col) * channels + (channels == 1 ? 0 : ch)];
  }
  void validate() const;
};

double default_atmosphere(WeatherKind kind) noexcept;

/// out = img^gamma per sample. gamma must be positive.
ImagePlane gamma_lowlight(const ImagePlane& img, double gamma);

/// out = img * (1 - map) + atmosphere * map, clamped to [0, 1].
ImagePlane composite_weather(const ImagePlane& img, const DegradationMap& map, double atmosphere);

enum class ImageDegradation { LowLight, Rain, Snow, Fog };
enum class Severity { Light, Heavy };

std::string_view to_string(ImageDegradation kind) noexcept;
std::string_view to_string(Severity level) noexcept;
ImageDegradation parse_image_degradation(std::string_view text);
Severity parse_severity(std::string_view text);

/// Gamma band for a low-light level: mild [1, 2], heavy [2, 3].
AxisRange lowlight_gamma_band(Severity level) noexcept;

/// What to apply to every frame of one timestamp. Unset kind or level is drawn.
struct ImageCorruptionSpec {
  std::optional<ImageDegradation> kind;
  std::optional<Severity> level;
  std::uint64_t seed = 0;
};

/// Concrete parameters drawn once per timestamp.
struct DegradationDraw {
  ImageDegradation kind = ImageDegradation::LowLight;
  Severity level = Severity::Light;  // snow has a single level, reported as Light
  double gamma = 1.0;                // low light only
  double atmosphere = 0.0;           // weather only
};

DegradationDraw draw_degradation(const ImageCorruptionSpec& spec, Rng& rng);
DegradationDraw draw_degradation(const ImageCorruptionSpec& spec);

/// Supplies the caller's degradation map for (kind, level, frame index).
using MapProvider = std::function<const DegradationMap&(WeatherKind, Severity, std::size_t)>;

struct TimestampResult {
  DegradationDraw draw;
  std::vector<ImagePlane> frames;
};

/// Draws one degradation from spec.seed and applies it to every frame.
TimestampResult same_timestamp_consistency(const std::vector<ImagePlane>& frames, const ImageCorruptionSpec& spec,
                                           const MapProvider& maps = {});

/// Applies an already drawn degradation to a single frame.
ImagePlane apply_degradation(const ImagePlane& frame, const DegradationDraw& draw, const DegradationMap* map);

// 8-bit netpbm bridges; samples map linearly between [0, 255] and [0, 1].
ImagePlane image_from_pnm(const PnmImage& pnm);
PnmImage image_to_pnm(const ImagePlane& img);
DegradationMap map_from_pnm(const PnmImage& pnm, WeatherKind kind);

}  // namespace rcr
