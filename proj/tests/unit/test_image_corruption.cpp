#include <cmath>
#include <fstream>

#include "doctest.h"

#include "rcr/image_corruption.hpp"
#include "rcr/pnm.hpp"
#include "support.hpp"

using namespace rcr;

namespace {

ImagePlane random_image(Rng& rng, std::size_t h, std::size_t w) {
  ImagePlane img(h, w);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

DegradationMap random_map(Rng& rng, std::size_t h, std::size_t w, std::size_t channels) {
  DegradationMap m{h, w, channels, std::vector<double>(h * w * channels), WeatherKind::Rain};
  for (double& v : m.data) v = rng.uniform();
  return m;
}

}  // namespace

TEST_CASE("gamma_lowlight") {
  Rng rng(1);
  const ImagePlane img = random_image(rng, 4, 5);
  CHECK(gamma_lowlight(img, 1.0) == img);
  ImagePlane half(1, 1, 0.5);
  CHECK(gamma_lowlight(half, 2.0).data[0] == 0.25);
  CHECK_THROWS_AS(gamma_lowlight(img, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gamma_lowlight(img, -1.0), std::invalid_argument);

  // Monotone non-increasing in gamma for samples in (0, 1).
  for (double v : {0.01, 0.3, 0.77, 0.999}) {
    ImagePlane p(1, 1, v);
    double prev = 2.0;
    for (double g = 0.5; g <= 5.0; g += 0.25) {
      const double out = gamma_lowlight(p, g).data[0];
      CHECK(out <= prev);
      CHECK(out >= 0.0);
      CHECK(out <= 1.0);
      prev = out;
    }
  }
}

TEST_CASE("composite_weather") {
  Rng rng(2);
  const ImagePlane img = random_image(rng, 6, 7);
  DegradationMap zero{6, 7, 1, std::vector<double>(42, 0.0), WeatherKind::Fog};
  CHECK(composite_weather(img, zero, 0.8) == img);
  DegradationMap one{6, 7, 1, std::vector<double>(42, 1.0), WeatherKind::Fog};
  for (double v : composite_weather(img, one, 1.0).data) CHECK(v == 1.0);

  for (std::size_t channels : {1u, 3u}) {
    const DegradationMap m = random_map(rng, 6, 7, channels);
    const ImagePlane out = composite_weather(img, m, 0.6);
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t c = 0; c < 7; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double a = m.data[(r * 7 + c) * channels + (channels == 3 ? ch : 0)];
          const double expected = img.data[(r * 7 + c) * 3 + ch] * (1.0 - a) + 0.6 * a;
          REQUIRE(std::abs(out.at(r, c, ch) - expected) <= 1e-12);
        }
      }
    }
  }
  DegradationMap wrong{5, 7, 1, std::vector<double>(35, 0.0), WeatherKind::Fog};
  CHECK_THROWS_AS(composite_weather(img, wrong, 0.8), std::invalid_argument);
}

TEST_CASE("composite_weather is affine in the image") {
  Rng rng(3);
  const ImagePlane a = random_image(rng, 5, 5), b = random_image(rng, 5, 5);
  const DegradationMap m = random_map(rng, 5, 5, 1);
  for (double t : {0.0, 0.3, 0.5, 1.0}) {
    ImagePlane mix(5, 5);
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = t * a.data[i] + (1 - t) * b.data[i];
    const ImagePlane lhs = composite_weather(mix, m, 0.8);
    const ImagePlane ra = composite_weather(a, m, 0.8), rb = composite_weather(b, m, 0.8);
    for (std::size_t i = 0; i < mix.data.size(); ++i) {
      REQUIRE(std::abs(lhs.data[i] - (t * ra.data[i] + (1 - t) * rb.data[i])) <= 1e-12);
    }
  }
}

TEST_CASE("outputs stay in range") {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const ImagePlane img = random_image(rng, 3, 3);
    CHECK_NOTHROW(gamma_lowlight(img, rng.uniform(0.1, 5)).validate());
    CHECK_NOTHROW(composite_weather(img, random_map(rng, 3, 3, 3), rng.uniform()).validate());
  }
}

TEST_CASE("gamma bands and atmospheres") {
  CHECK(lowlight_gamma_band(Severity::Light).min == 1.0);
  CHECK(lowlight_gamma_band(Severity::Light).max == 2.0);
  CHECK(lowlight_gamma_band(Severity::Heavy).min == 2.0);
  CHECK(lowlight_gamma_band(Severity::Heavy).max == 3.0);
  CHECK(default_atmosphere(WeatherKind::Fog) == 0.8);
  CHECK(default_atmosphere(WeatherKind::Snow) == 0.8);
  CHECK(default_atmosphere(WeatherKind::Rain) == 0.6);

  Rng rng(5);
  for (auto level : {Severity::Light, Severity::Heavy}) {
    const AxisRange band = lowlight_gamma_band(level);
    std::vector<double> gs;
    for (int i = 0; i < 20000; ++i) {
      const DegradationDraw d = draw_degradation({ImageDegradation::LowLight, level, 0}, rng);
      REQUIRE(d.gamma >= band.min);
      REQUIRE(d.gamma <= band.max);
      gs.push_back(d.gamma);
    }
    CHECK(std::abs(testsupport::mean(gs) - (band.min + band.max) / 2) < 0.01);
  }
}

TEST_CASE("snow has a single level") {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const DegradationDraw d = draw_degradation({ImageDegradation::Snow, Severity::Heavy, 0}, rng);
    CHECK(d.level == Severity::Light);
    CHECK(d.atmosphere == 0.8);
  }
}

TEST_CASE("same_timestamp_consistency shares the draw") {
  Rng rng(7);
  const std::vector<ImagePlane> frames{random_image(rng, 4, 4), random_image(rng, 4, 4), random_image(rng, 4, 4)};
  const ImageCorruptionSpec spec{ImageDegradation::LowLight, std::nullopt, 42};
  const TimestampResult r = same_timestamp_consistency(frames, spec);
  REQUIRE(r.frames.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.frames[i] == gamma_lowlight(frames[i], r.draw.gamma));
  CHECK(same_timestamp_consistency(frames, spec).draw.gamma == r.draw.gamma);

  const TimestampResult single = same_timestamp_consistency({frames[0]}, spec);
  CHECK(single.frames[0] == apply_degradation(frames[0], single.draw, nullptr));

  CHECK_THROWS_AS(same_timestamp_consistency({}, spec), std::invalid_argument);

  const DegradationMap fog = random_map(rng, 4, 4, 1);
  std::vector<std::size_t> requested;
  const MapProvider provider = [&](WeatherKind kind, Severity, std::size_t i) -> const DegradationMap& {
    CHECK(kind == WeatherKind::Fog);
    requested.push_back(i);
    return fog;
  };
  const TimestampResult w = same_timestamp_consistency(frames, {ImageDegradation::Fog, Severity::Heavy, 1}, provider);
  CHECK(requested == std::vector<std::size_t>{0, 1, 2});
  CHECK(w.frames[1] == composite_weather(frames[1], fog, 0.8));
  CHECK_THROWS_AS(same_timestamp_consistency(frames, {ImageDegradation::Fog, Severity::Heavy, 1}),
                  std::invalid_argument);
}

TEST_CASE("degradation names") {
  CHECK(parse_image_degradation("lowlight") == ImageDegradation::LowLight);
  CHECK(parse_image_degradation("fog") == ImageDegradation::Fog);
  CHECK(parse_severity("mild") == Severity::Light);
  CHECK(parse_severity("heavy") == Severity::Heavy);
  CHECK_THROWS_AS(parse_image_degradation("hail"), ConfigError);
  CHECK_THROWS_AS(parse_severity("medium"), ConfigError);
}

TEST_CASE("pnm round-trip") {
  const auto dir = testsupport::scratch_dir("pnm");
  PnmImage rgb{3, 2, 3, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 255, 128, 64, 32, 16, 8, 4}};
  write_pnm(dir / "a.ppm", rgb);
  const PnmImage back = read_pnm(dir / "a.ppm");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.channels == 3);
  CHECK(back.pixels == rgb.pixels);

  PnmImage gray{2, 2, 1, {0, 51, 102, 255}};
  write_pnm(dir / "g.pgm", gray);
  const ImagePlane img = image_from_pnm(read_pnm(dir / "g.pgm"));
  CHECK(img.at(0, 1, 2) == 51 / 255.0);
  CHECK(image_to_pnm(img).pixels[3] == 51);

  {
    std::ofstream(dir / "comment.pgm", std::ios::binary) << "P5\n# made by hand\n2 1\n255\n" << '\x07' << '\x09';
    std::ofstream(dir / "deep.pgm", std::ios::binary) << "P5\n1 1\n65535\n" << '\0' << '\0';
    std::ofstream(dir / "ascii.pgm") << "P2\n1 1\n255\n7\n";
    std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\n" << '\0';
  }
  CHECK(read_pnm(dir / "comment.pgm").pixels == std::vector<std::uint8_t>{7, 9});
  CHECK_THROWS(read_pnm(dir / "deep.pgm"));
  CHECK_THROWS(read_pnm(dir / "ascii.pgm"));
  CHECK_THROWS(read_pnm(dir / "short.pgm"));
}
