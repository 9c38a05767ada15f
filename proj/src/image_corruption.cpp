#include "rcr/image_corruption.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rcr {

namespace {

void require_unit_samples(const std::vector<double>& data, const char* what) {
  for (double v : data) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(what) + ": sample outside [0, 1]");
  }
}

WeatherKind weather_of(ImageDegradation kind) {
  switch (kind) {
    case ImageDegradation::Rain: return WeatherKind::Rain;
    case ImageDegradation::Snow: return WeatherKind::Snow;
    case ImageDegradation::Fog: return WeatherKind::Fog;
    case ImageDegradation::LowLight: break;
  }
  throw std::logic_error("low light is not a weather kind");
}

}  // namespace

void ImagePlane::validate() const {
  if (data.size() != height * width * channels) throw std::invalid_argument("image buffer does not match dimensions");
  require_unit_samples(data, "image");
}

void DegradationMap::validate() const {
  if (channels != 1 && channels != 3) throw std::invalid_argument("degradation map must have 1 or 3 channels");
  if (data.size() != height * width * channels) throw std::invalid_argument("map buffer does not match dimensions");
  require_unit_samples(data, "degradation map");
}

double default_atmosphere(WeatherKind kind) noexcept {
  switch (kind) {
    case WeatherKind::Rain: return constants::kRainAtmosphere;
    case WeatherKind::Snow: return constants::kSnowAtmosphere;
    case WeatherKind::Fog: return constants::kFogAtmosphere;
  }
  return constants::kFogAtmosphere;
}

ImagePlane gamma_lowlight(const ImagePlane& img, double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be positive");
  ImagePlane out = img;
  if (gamma == 1.0) return out;
  for (double& v : out.data) v = std::clamp(std::pow(v, gamma), 0.0, 1.0);
  return out;
}

ImagePlane composite_weather(const ImagePlane& img, const DegradationMap& map, double atmosphere) {
  if (map.height != img.height || map.width != img.width) {
    throw std::invalid_argument("composite_weather: map is " + std::to_string(map.height) + "x" +
                                std::to_string(map.width) + ", image is " + std::to_string(img.height) + "x" +
                                std::to_string(img.width));
  }
  if (map.channels != 1 && map.channels != 3) throw std::invalid_argument("composite_weather: bad map channels");
  ImagePlane out = img;
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      for (std::size_t ch = 0; ch < ImagePlane::channels; ++ch) {
        const double alpha = map.at(r, c, ch);
        out.at(r, c, ch) = std::clamp(img.at(r, c, ch) * (1.0 - alpha) + atmosphere * alpha, 0.0, 1.0);
      }
    }
  }
  return out;
}

std::string_view to_string(ImageDegradation kind) noexcept {
  switch (kind) {
    case ImageDegradation::LowLight: return "lowlight";
    case ImageDegradation::Rain: return "rain";
    case ImageDegradation::Snow: return "snow";
    case ImageDegradation::Fog: return "fog";
  }
  return "?";
}

std::string_view to_string(Severity level) noexcept { return level == Severity::Light ? "light" : "heavy"; }

ImageDegradation parse_image_degradation(std::string_view text) {
  for (auto kind : {ImageDegradation::LowLight, ImageDegradation::Rain, ImageDegradation::Snow, ImageDegradation::Fog}) {
    if (text == to_string(kind)) return kind;
  }
  throw ConfigError("unknown image degradation '" + std::string(text) + "'");
}

Severity parse_severity(std::string_view text) {
  if (text == "light" || text == "mild") return Severity::Light;
  if (text == "heavy") return Severity::Heavy;
  throw ConfigError("unknown severity '" + std::string(text) + "'");
}

AxisRange lowlight_gamma_band(Severity level) noexcept {
  if (level == Severity::Light) return {constants::kMildGammaMin, constants::kMildGammaMax};
  return {constants::kHeavyGammaMin, constants::kHeavyGammaMax};
}

DegradationDraw draw_degradation(const ImageCorruptionSpec& spec, Rng& rng) {
  static constexpr ImageDegradation kKinds[] = {ImageDegradation::LowLight, ImageDegradation::Rain,
                                                ImageDegradation::Snow, ImageDegradation::Fog};
  DegradationDraw draw;
  draw.kind = spec.kind ? *spec.kind : kKinds[rng.below(4)];
  if (draw.kind == ImageDegradation::Snow) {
    draw.level = Severity::Light;
  } else {
    draw.level = spec.level ? *spec.level : (rng.below(2) == 0 ? Severity::Light : Severity::Heavy);
  }
  if (draw.kind == ImageDegradation::LowLight) {
    const AxisRange band = lowlight_gamma_band(draw.level);
    draw.gamma = rng.uniform(band.min, band.max);
  } else {
    draw.atmosphere = default_atmosphere(weather_of(draw.kind));
  }
  return draw;
}

DegradationDraw draw_degradation(const ImageCorruptionSpec& spec) {
  Rng rng(spec.seed);
  return draw_degradation(spec, rng);
}

ImagePlane apply_degradation(const ImagePlane& frame, const DegradationDraw& draw, const DegradationMap* map) {
  if (draw.kind == ImageDegradation::LowLight) return gamma_lowlight(frame, draw.gamma);
  if (map == nullptr) throw std::invalid_argument("weather degradation needs a map");
  return composite_weather(frame, *map, draw.atmosphere);
}

TimestampResult same_timestamp_consistency(const std::vector<ImagePlane>& frames, const ImageCorruptionSpec& spec,
                                           const MapProvider& maps) {
  if (frames.empty()) throw std::invalid_argument("same_timestamp_consistency: no frames");
  TimestampResult result;
  result.draw = draw_degradation(spec);
  result.frames.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const DegradationMap* map = nullptr;
    if (result.draw.kind != ImageDegradation::LowLight) {
      if (!maps) throw std::invalid_argument("weather degradation drawn but no map provider given");
      map = &maps(weather_of(result.draw.kind), result.draw.level, i);
    }
    result.frames.push_back(apply_degradation(frames[i], result.draw, map));
  }
  return result;
}

ImagePlane image_from_pnm(const PnmImage& pnm) {
  ImagePlane img(pnm.height, pnm.width);
  for (std::size_t r = 0; r < pnm.height; ++r) {
    for (std::size_t c = 0; c < pnm.width; ++c) {
      for (std::size_t ch = 0; ch < ImagePlane::channels; ++ch) {
        const std::size_t src = (r * pnm.width + c) * pnm.channels + (pnm.channels == 1 ? 0 : ch);
        img.at(r, c, ch) = pnm.pixels[src] / 255.0;
      }
    }
  }
  return img;
}

PnmImage image_to_pnm(const ImagePlane& img) {
  PnmImage pnm{img.width, img.height, 3, {}};
  pnm.pixels.reserve(img.data.size());
  for (double v : img.data) {
    pnm.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return pnm;
}

DegradationMap map_from_pnm(const PnmImage& pnm, WeatherKind kind) {
  DegradationMap map{pnm.height, pnm.width, pnm.channels, {}, kind};
  map.data.reserve(pnm.pixels.size());
  for (std::uint8_t p : pnm.pixels) map.data.push_back(p / 255.0);
  return map;
}

}  // namespace rcr
