#pragma once

#include <array>
#include <cstddef>

// Published operating constants. Anything not listed here is a local default.
namespace rcr::constants {

// BEV grid: planar radar range and feature-map resolution.
inline constexpr double kRadarRangeMin = -51.2;
inline constexpr double kRadarRangeMax = 51.2;
inline constexpr std::size_t kBevCells = 128;

// Vertical extent is not published; 1 m cells over [-5, 3] m.
inline constexpr double kDefaultZMin = -5.0;
inline constexpr double kDefaultZMax = 3.0;
inline constexpr std::size_t kDefaultZCells = 8;

// Corruption severity sampler sigma ~ U(1, 50).
inline constexpr double kSigmaMin = 1.0;
inline constexpr double kSigmaMax = 50.0;

// Key-point missing: M = floor(|p| / 2) for whole-cloud removal, 8 for in-box removal.
inline constexpr std::size_t kMaxInBoxRemoval = 8;

inline constexpr std::size_t kDefaultBeamCount = 32;
inline constexpr double kDefaultSpuriousRatio = 0.2;

// 3DGE kernel side lengths.
inline constexpr std::array<int, 3> kKernelSizes = {1, 3, 5};

// Deformable cross-attention.
inline constexpr std::size_t kAttentionHeads = 8;
inline constexpr std::size_t kSamplingPoints = 2;
inline constexpr double kLayerNormEpsilon = 1e-5;

// Low-light gamma bands.
inline constexpr double kMildGammaMin = 1.0;
inline constexpr double kMildGammaMax = 2.0;
inline constexpr double kHeavyGammaMin = 2.0;
inline constexpr double kHeavyGammaMax = 3.0;

// Weather compositing atmosphere values.
inline constexpr double kFogAtmosphere = 0.8;
inline constexpr double kSnowAtmosphere = 0.8;
inline constexpr double kRainAtmosphere = 0.6;

// Clean:noisy mix of 8:2 for the training-set manifest.
inline constexpr double kCleanRatio = 0.8;

}  // namespace rcr::constants
