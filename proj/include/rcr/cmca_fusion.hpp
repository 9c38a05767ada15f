#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rcr/constants.hpp"
#include "rcr/rng.hpp"

namespace rcr {

/// Dense C x H x W field, index (c * H + h) * W + w.
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  std::size_t plane() const noexcept { return height * width; }
  double& at(std::size_t c, std::size_t h, std::size_t w) { return data[(c * height + h) * width + w]; }
  double at(std::size_t c, std::size_t h, std::size_t w) const { return data[(c * height + h) * width + w]; }
  bool same_shape(const FeatureMap& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

/// Per-cell camera confidence in (0, 1); the radar weight is its complement.
struct ConfidenceMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  double at(std::size_t h, std::size_t w) const { return data[h * width + w]; }
  double complement(std::size_t h, std::size_t w) const { return 1.0 - at(h, w); }
};

/// Row-major out x in weight with bias.
struct Affine {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  Affine() = default;
  Affine(std::size_t in_dim, std::size_t out_dim) : in(in_dim), out(out_dim), weight(in_dim * out_dim), bias(out_dim) {}
  double& w(std::size_t o, std::size_t i) { return weight[o * in + i]; }
  double w(std::size_t o, std::size_t i) const { return weight[o * in + i]; }
};

struct LayerNormParams {
  std::vector<double> scale;
  std::vector<double> shift;

  static LayerNormParams identity(std::size_t channels) {
    return {std::vector<double>(channels, 1.0), std::vector<double>(channels, 0.0)};
  }
};

inline constexpr std::size_t kConfidenceHidden = 16;

struct ConfidenceMlp {
  Affine hidden;  // C -> 16, rectifier
  Affine logits;  // 16 -> 2 (camera, radar)
};

/// Single-scale deformable attention. Offsets and point weights come from
/// per-head affine maps of the query; (dx, dy) pairs are laid out as
/// row 2 * (head * points + point) + {0: dx, 1: dy}.
struct DeformAttnParams {
  std::size_t heads = constants::kAttentionHeads;
  std::size_t points = constants::kSamplingPoints;
  std::size_t value_channels = 0;
  Affine offset;  // C -> heads * points * 2
  Affine weight;  // C -> heads * points
  Affine output;  // value_channels -> C
};

/// 3x3 convolution with zero padding, weight index ((o * C + i) * 3 + ky) * 3 + kx.
struct Conv3x3 {
  std::size_t channels = 0;
  std::vector<double> weight;
  std::vector<double> bias;
};

struct FusionParams {
  std::size_t channels = 0;
  LayerNormParams ln_image;
  LayerNormParams ln_radar;
  LayerNormParams ln_weighted_image;
  LayerNormParams ln_weighted_radar;
  ConfidenceMlp conf_mlp;
  Affine agg_w;  // 2C -> C
  DeformAttnParams attn_plain;
  DeformAttnParams attn_conf;
  Conv3x3 out_conv;

  /// Throws std::invalid_argument on inconsistent widths or a head count that does not divide the value width.
  void validate() const;
};

/// Seeded random parameters for C channels. Weights ~ N(0, 1/fan_in), offset biases ~ U(-1.5, 1.5) cells.
FusionParams random_fusion_params(std::size_t channels, Rng& rng, std::size_t heads = constants::kAttentionHeads,
                                  std::size_t points = constants::kSamplingPoints);

// Forward operations.

/// Per-cell standardization across channels, then per-channel scale and shift. The
/// spread is floored at epsilon: x_hat = (x - mean) / max(std, eps).
FeatureMap layer_norm(const FeatureMap& f, const LayerNormParams& ln, double eps = constants::kLayerNormEpsilon);

ConfidenceMap confidence_map(const FeatureMap& f_image, const ConfidenceMlp& mlp);

struct WeightedFeatures {
  FeatureMap image;  // M_c * f_I
  FeatureMap radar;  // (1 - M_c) * f_p
};
WeightedFeatures weight_features(const FeatureMap& f_image, const FeatureMap& f_radar, const ConfidenceMap& m);

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);

/// Per-cell affine map over channels.
FeatureMap apply_affine(const FeatureMap& f, const Affine& affine);

/// W(Concat(LN(f_I), LN(f_p))): the attention query.
FeatureMap aggregate(const FeatureMap& f_image, const FeatureMap& f_radar, const FusionParams& params);

/// Concat(LN(f_I^c), LN(f_p^c)) with the weighted-branch LN parameters.
FeatureMap concat_mm(const FeatureMap& weighted_image, const FeatureMap& weighted_radar, const FusionParams& params);

/// Bilinear read of one channel at fractional (y, x), clamped to the map border.
double bilinear_sample(const FeatureMap& f, std::size_t channel, double y, double x);

struct SampleLocation {
  double x = 0.0;  // unclamped column coordinate
  double y = 0.0;  // unclamped row coordinate
};

/// Sampling coordinates for every (cell, head, point), index ((h * W + w) * heads + head) * points + point.
std::vector<SampleLocation> sampling_locations(const FeatureMap& query, const DeformAttnParams& attn);

FeatureMap deform_cross_attention(const FeatureMap& query, const FeatureMap& value, const DeformAttnParams& attn);

FeatureMap conv3x3(const FeatureMap& f, const Conv3x3& conv);

/// Conv(DeformCA(f_A, Concat(f_I, f_p)) + DeformCA(f_A, f_mm)).
FeatureMap fuse_bev(const FeatureMap& f_image, const FeatureMap& f_radar, const FusionParams& params);

// Vector-Jacobian products with respect to the feature inputs.

struct FeatureGradPair {
  FeatureMap first;
  FeatureMap second;
};

FeatureMap layer_norm_backward(const FeatureMap& f, const LayerNormParams& ln, const FeatureMap& grad_out,
                               double eps = constants::kLayerNormEpsilon);

/// grad_m has one entry per cell.
FeatureMap confidence_map_backward(const FeatureMap& f_image, const ConfidenceMlp& mlp, std::span<const double> grad_m);

struct WeightFeaturesGrad {
  FeatureMap image;
  FeatureMap radar;
  std::vector<double> confidence;
};
WeightFeaturesGrad weight_features_backward(const FeatureMap& f_image, const FeatureMap& f_radar, const ConfidenceMap& m,
                                            const FeatureMap& grad_image, const FeatureMap& grad_radar);

FeatureMap apply_affine_backward(const Affine& affine, const FeatureMap& grad_out);

FeatureGradPair aggregate_backward(const FeatureMap& f_image, const FeatureMap& f_radar, const FusionParams& params,
                                   const FeatureMap& grad_out);

FeatureGradPair concat_mm_backward(const FeatureMap& weighted_image, const FeatureMap& weighted_radar,
                                   const FusionParams& params, const FeatureMap& grad_out);

/// first: grad w.r.t. query, second: grad w.r.t. value.
FeatureGradPair deform_cross_attention_backward(const FeatureMap& query, const FeatureMap& value,
                                                const DeformAttnParams& attn, const FeatureMap& grad_out);

FeatureMap conv3x3_backward(const Conv3x3& conv, const FeatureMap& grad_out);

/// first: grad w.r.t. f_I, second: grad w.r.t. f_p.
FeatureGradPair fuse_bev_backward(const FeatureMap& f_image, const FeatureMap& f_radar, const FusionParams& params,
                                  const FeatureMap& grad_out);

// Parameter file: "CMCA", u32 version, u32 C H W heads points, then every block
// as little-endian float64 in declaration order. The manifest is a text table of
// block name, shape and byte offset.

inline constexpr std::uint32_t kFusionParamsFormatVersion = 1;

struct FusionParamsFile {
  FusionParams params;
  std::size_t height = 0;
  std::size_t width = 0;
};

void write_fusion_params(const std::filesystem::path& path, const FusionParams& params, std::size_t height,
                         std::size_t width);
FusionParamsFile read_fusion_params(const std::filesystem::path& path);
/// "name rows cols offset" per line, offsets in bytes from the start of the file.
std::string fusion_params_manifest(const FusionParams& params);

}  // namespace rcr
