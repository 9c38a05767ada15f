#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace rcr {

/// 8-bit binary netpbm raster: P5 (1 channel) or P6 (3 channels), maxval 255.
struct PnmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;  // row-major, channels interleaved

  friend bool operator==(const PnmImage&, const PnmImage&) = default;
};

PnmImage read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const PnmImage& image);

}  // namespace rcr
