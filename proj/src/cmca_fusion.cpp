#include "rcr/cmca_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace rcr {

namespace {

void require_spatial_match(const FeatureMap& a, const FeatureMap& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(std::string(what) + ": spatial dimensions differ (" + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ")");
  }
}

void require_channels(const FeatureMap& f, std::size_t channels, const char* what) {
  if (f.channels != channels) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                                std::to_string(f.channels));
  }
}

void check_affine(const Affine& a, std::size_t in, std::size_t out, const char* what) {
  if (a.in != in || a.out != out || a.weight.size() != in * out || a.bias.size() != out) {
    throw std::invalid_argument(std::string(what) + ": affine shape mismatch");
  }
}

void check_ln(const LayerNormParams& ln, std::size_t channels, const char* what) {
  if (ln.scale.size() != channels || ln.shift.size() != channels) {
    throw std::invalid_argument(std::string(what) + ": layer norm width mismatch");
  }
}

void check_attn(const DeformAttnParams& a, std::size_t channels, const char* what) {
  if (a.heads == 0 || a.points == 0) throw std::invalid_argument(std::string(what) + ": heads and points must be positive");
  if (a.value_channels % a.heads != 0) {
    throw std::invalid_argument(std::string(what) + ": value channels " + std::to_string(a.value_channels) +
                                " not divisible by " + std::to_string(a.heads) + " heads");
  }
  check_affine(a.offset, channels, a.heads * a.points * 2, what);
  check_affine(a.weight, channels, a.heads * a.points, what);
  check_affine(a.output, a.value_channels, channels, what);
}

Affine random_affine(std::size_t in, std::size_t out, Rng& rng) {
  Affine a(in, out);
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : a.weight) w = std_dev * rng.normal();
  for (double& b : a.bias) b = 0.1 * rng.normal();
  return a;
}

LayerNormParams random_ln(std::size_t channels, Rng& rng) {
  LayerNormParams ln;
  for (std::size_t c = 0; c < channels; ++c) {
    ln.scale.push_back(1.0 + 0.2 * rng.normal());
    ln.shift.push_back(0.1 * rng.normal());
  }
  return ln;
}

DeformAttnParams random_attn(std::size_t channels, std::size_t value_channels, std::size_t heads, std::size_t points,
                             Rng& rng) {
  DeformAttnParams a;
  a.heads = heads;
  a.points = points;
  a.value_channels = value_channels;
  a.offset = random_affine(channels, heads * points * 2, rng);
  for (double& w : a.offset.weight) w *= 0.5;
  for (double& b : a.offset.bias) b = rng.uniform(-1.5, 1.5);
  a.weight = random_affine(channels, heads * points, rng);
  a.output = random_affine(value_channels, channels, rng);
  return a;
}

struct LnStats {
  double mean;
  double inv_std;
};

LnStats ln_stats(const FeatureMap& f, std::size_t cell, double eps) {
  const std::size_t plane = f.plane();
  double mean = 0.0;
  for (std::size_t c = 0; c < f.channels; ++c) mean += f.data[c * plane + cell];
  mean /= static_cast<double>(f.channels);
  double var = 0.0;
  for (std::size_t c = 0; c < f.channels; ++c) {
    const double d = f.data[c * plane + cell] - mean;
    var += d * d;
  }
  var /= static_cast<double>(f.channels);
  return {mean, 1.0 / std::max(std::sqrt(var), eps)};
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kConfidenceFloor = std::numeric_limits<double>::epsilon();

struct MlpCell {
  std::array<double, kConfidenceHidden> hidden{};
  double m = 0.5;
  bool saturated = false;
};

MlpCell run_mlp(const FeatureMap& f, std::size_t cell, const ConfidenceMlp& mlp) {
  MlpCell out;
  const std::size_t plane = f.plane();
  for (std::size_t j = 0; j < kConfidenceHidden; ++j) {
    double acc = mlp.hidden.bias[j];
    for (std::size_t c = 0; c < f.channels; ++c) acc += mlp.hidden.w(j, c) * f.data[c * plane + cell];
    out.hidden[j] = std::max(0.0, acc);
  }
  std::array<double, 2> logit{};
  for (std::size_t o = 0; o < 2; ++o) {
    double acc = mlp.logits.bias[o];
    for (std::size_t j = 0; j < kConfidenceHidden; ++j) acc += mlp.logits.w(o, j) * out.hidden[j];
    logit[o] = acc;
  }
  // Two-way softmax: probability of the camera logit.
  const double m = sigmoid(logit[0] - logit[1]);
  out.m = std::clamp(m, kConfidenceFloor, 1.0 - kConfidenceFloor);
  out.saturated = out.m != m;
  return out;
}

struct Bilinear {
  std::size_t y0, y1, x0, x1;
  double fy, fx;
  bool y_inside, x_inside;  // false when the coordinate was clamped
};

Bilinear bilinear_setup(double y, double x, std::size_t height, std::size_t width) {
  const double max_y = static_cast<double>(height - 1);
  const double max_x = static_cast<double>(width - 1);
  const double cy = std::clamp(y, 0.0, max_y);
  const double cx = std::clamp(x, 0.0, max_x);
  Bilinear b{};
  b.y0 = static_cast<std::size_t>(std::floor(cy));
  b.x0 = static_cast<std::size_t>(std::floor(cx));
  b.y1 = std::min(b.y0 + 1, height - 1);
  b.x1 = std::min(b.x0 + 1, width - 1);
  b.fy = cy - static_cast<double>(b.y0);
  b.fx = cx - static_cast<double>(b.x0);
  b.y_inside = y > 0.0 && y < max_y;
  b.x_inside = x > 0.0 && x < max_x;
  return b;
}

double bilinear_read(const FeatureMap& f, std::size_t channel, const Bilinear& b) {
  const double v00 = f.at(channel, b.y0, b.x0);
  const double v01 = f.at(channel, b.y0, b.x1);
  const double v10 = f.at(channel, b.y1, b.x0);
  const double v11 = f.at(channel, b.y1, b.x1);
  return (1.0 - b.fy) * ((1.0 - b.fx) * v00 + b.fx * v01) + b.fy * ((1.0 - b.fx) * v10 + b.fx * v11);
}

/// Per-cell attention terms shared by the forward and backward passes.
struct AttnCell {
  std::vector<Bilinear> taps;   // heads * points
  std::vector<double> attn;     // softmax weights, heads * points
};

AttnCell attn_cell(const FeatureMap& query, const FeatureMap& value, const DeformAttnParams& a, std::size_t h,
                   std::size_t w) {
  const std::size_t n = a.heads * a.points;
  const std::size_t plane = query.plane();
  const std::size_t cell = h * query.width + w;
  AttnCell out;
  out.taps.reserve(n);
  out.attn.resize(n);
  std::vector<double> q(query.channels);
  for (std::size_t c = 0; c < query.channels; ++c) q[c] = query.data[c * plane + cell];
  auto dot_row = [&](const Affine& aff, std::size_t row) {
    double acc = aff.bias[row];
    for (std::size_t c = 0; c < aff.in; ++c) acc += aff.w(row, c) * q[c];
    return acc;
  };
  for (std::size_t s = 0; s < n; ++s) {
    const double dx = dot_row(a.offset, 2 * s);
    const double dy = dot_row(a.offset, 2 * s + 1);
    out.taps.push_back(bilinear_setup(static_cast<double>(h) + dy, static_cast<double>(w) + dx, value.height,
                                      value.width));
    out.attn[s] = dot_row(a.weight, s);
  }
  for (std::size_t k = 0; k < a.heads; ++k) {
    double* logits = out.attn.data() + k * a.points;
    const double top = *std::max_element(logits, logits + a.points);
    double total = 0.0;
    for (std::size_t p = 0; p < a.points; ++p) {
      logits[p] = std::exp(logits[p] - top);
      total += logits[p];
    }
    for (std::size_t p = 0; p < a.points; ++p) logits[p] /= total;
  }
  return out;
}

/// Head-concatenated sampled values before the output projection.
FeatureMap attention_samples(const FeatureMap& query, const FeatureMap& value, const DeformAttnParams& a) {
  const std::size_t per_head = a.value_channels / a.heads;
  FeatureMap sampled(a.value_channels, query.height, query.width);
  for (std::size_t h = 0; h < query.height; ++h) {
    for (std::size_t w = 0; w < query.width; ++w) {
      const AttnCell cell = attn_cell(query, value, a, h, w);
      for (std::size_t k = 0; k < a.heads; ++k) {
        for (std::size_t d = 0; d < per_head; ++d) {
          const std::size_t ch = k * per_head + d;
          double acc = 0.0;
          for (std::size_t p = 0; p < a.points; ++p) {
            const std::size_t s = k * a.points + p;
            acc += cell.attn[s] * bilinear_read(value, ch, cell.taps[s]);
          }
          sampled.at(ch, h, w) = acc;
        }
      }
    }
  }
  return sampled;
}

FeatureMap split_channels(const FeatureMap& f, std::size_t begin, std::size_t count) {
  FeatureMap out(count, f.height, f.width);
  std::copy_n(f.data.begin() + static_cast<std::ptrdiff_t>(begin * f.plane()), count * f.plane(), out.data.begin());
  return out;
}

void add_into(FeatureMap& acc, const FeatureMap& g) {
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
}

}  // namespace

void FusionParams::validate() const {
  const std::size_t c = channels;
  if (c == 0) throw std::invalid_argument("fusion params: zero channels");
  check_ln(ln_image, c, "ln_image");
  check_ln(ln_radar, c, "ln_radar");
  check_ln(ln_weighted_image, c, "ln_weighted_image");
  check_ln(ln_weighted_radar, c, "ln_weighted_radar");
  check_affine(conf_mlp.hidden, c, kConfidenceHidden, "conf_mlp.hidden");
  check_affine(conf_mlp.logits, kConfidenceHidden, 2, "conf_mlp.logits");
  check_affine(agg_w, 2 * c, c, "agg_w");
  check_attn(attn_plain, c, "attn_plain");
  check_attn(attn_conf, c, "attn_conf");
  if (attn_plain.value_channels != 2 * c || attn_conf.value_channels != 2 * c) {
    throw std::invalid_argument("fusion params: attention value width must be 2C");
  }
  if (out_conv.channels != c || out_conv.weight.size() != c * c * 9 || out_conv.bias.size() != c) {
    throw std::invalid_argument("fusion params: out_conv shape mismatch");
  }
}

FusionParams random_fusion_params(std::size_t channels, Rng& rng, std::size_t heads, std::size_t points) {
  FusionParams p;
  p.channels = channels;
  p.ln_image = random_ln(channels, rng);
  p.ln_radar = random_ln(channels, rng);
  p.ln_weighted_image = random_ln(channels, rng);
  p.ln_weighted_radar = random_ln(channels, rng);
  p.conf_mlp.hidden = random_affine(channels, kConfidenceHidden, rng);
  p.conf_mlp.logits = random_affine(kConfidenceHidden, 2, rng);
  p.agg_w = random_affine(2 * channels, channels, rng);
  p.attn_plain = random_attn(channels, 2 * channels, heads, points, rng);
  p.attn_conf = random_attn(channels, 2 * channels, heads, points, rng);
  p.out_conv.channels = channels;
  const double std_dev = 1.0 / std::sqrt(9.0 * static_cast<double>(channels));
  for (std::size_t i = 0; i < channels * channels * 9; ++i) p.out_conv.weight.push_back(std_dev * rng.normal());
  for (std::size_t i = 0; i < channels; ++i) p.out_conv.bias.push_back(0.1 * rng.normal());
  p.validate();
  return p;
}

FeatureMap layer_norm(const FeatureMap& f, const LayerNormParams& ln, double eps) {
  check_ln(ln, f.channels, "layer_norm");
  FeatureMap out(f.channels, f.height, f.width);
  const std::size_t plane = f.plane();
  for (std::size_t cell = 0; cell < plane; ++cell) {
    const LnStats s = ln_stats(f, cell, eps);
    for (std::size_t c = 0; c < f.channels; ++c) {
      const double xhat = (f.data[c * plane + cell] - s.mean) * s.inv_std;
      out.data[c * plane + cell] = ln.scale[c] * xhat + ln.shift[c];
    }
  }
  return out;
}

FeatureMap layer_norm_backward(const FeatureMap& f, const LayerNormParams& ln, const FeatureMap& grad_out, double eps) {
  check_ln(ln, f.channels, "layer_norm_backward");
  FeatureMap grad(f.channels, f.height, f.width);
  const std::size_t plane = f.plane();
  const auto n = static_cast<double>(f.channels);
  std::vector<double> g_hat(f.channels), x_hat(f.channels);
  for (std::size_t cell = 0; cell < plane; ++cell) {
    const LnStats s = ln_stats(f, cell, eps);
    double var = 0.0;
    for (std::size_t c = 0; c < f.channels; ++c) {
      const double d = f.data[c * plane + cell] - s.mean;
      var += d * d;
    }
    const bool floored = std::sqrt(var / n) <= eps;
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t c = 0; c < f.channels; ++c) {
      x_hat[c] = (f.data[c * plane + cell] - s.mean) * s.inv_std;
      g_hat[c] = grad_out.data[c * plane + cell] * ln.scale[c];
      mean_g += g_hat[c];
      mean_gx += g_hat[c] * x_hat[c];
    }
    mean_g /= n;
    mean_gx /= n;
    // With a floored spread the denominator is constant and only centering remains.
    if (floored) mean_gx = 0.0;
    for (std::size_t c = 0; c < f.channels; ++c) {
      grad.data[c * plane + cell] = s.inv_std * (g_hat[c] - mean_g - x_hat[c] * mean_gx);
    }
  }
  return grad;
}

ConfidenceMap confidence_map(const FeatureMap& f_image, const ConfidenceMlp& mlp) {
  check_affine(mlp.hidden, f_image.channels, kConfidenceHidden, "confidence_map");
  check_affine(mlp.logits, kConfidenceHidden, 2, "confidence_map");
  ConfidenceMap m{f_image.height, f_image.width, std::vector<double>(f_image.plane())};
  for (std::size_t cell = 0; cell < f_image.plane(); ++cell) m.data[cell] = run_mlp(f_image, cell, mlp).m;
  return m;
}

FeatureMap confidence_map_backward(const FeatureMap& f_image, const ConfidenceMlp& mlp, std::span<const double> grad_m) {
  if (grad_m.size() != f_image.plane()) throw std::invalid_argument("confidence_map_backward: gradient size mismatch");
  FeatureMap grad(f_image.channels, f_image.height, f_image.width);
  const std::size_t plane = f_image.plane();
  for (std::size_t cell = 0; cell < plane; ++cell) {
    const MlpCell fwd = run_mlp(f_image, cell, mlp);
    if (fwd.saturated) continue;
    const double g_diff = grad_m[cell] * fwd.m * (1.0 - fwd.m);
    // d(logit0 - logit1) routes +g to logit 0 and -g to logit 1.
    for (std::size_t j = 0; j < kConfidenceHidden; ++j) {
      if (fwd.hidden[j] <= 0.0) continue;
      const double g_h = g_diff * (mlp.logits.w(0, j) - mlp.logits.w(1, j));
      for (std::size_t c = 0; c < f_image.channels; ++c) grad.data[c * plane + cell] += g_h * mlp.hidden.w(j, c);
    }
  }
  return grad;
}

WeightedFeatures weight_features(const FeatureMap& f_image, const FeatureMap& f_radar, const ConfidenceMap& m) {
  require_spatial_match(f_image, f_radar, "weight_features");
  if (m.height != f_image.height || m.width != f_image.width) {
    throw std::invalid_argument("weight_features: confidence map dimensions differ");
  }
  WeightedFeatures out{f_image, f_radar};
  const std::size_t plane = f_image.plane();
  for (std::size_t c = 0; c < f_image.channels; ++c) {
    for (std::size_t cell = 0; cell < plane; ++cell) out.image.data[c * plane + cell] *= m.data[cell];
  }
  for (std::size_t c = 0; c < f_radar.channels; ++c) {
    for (std::size_t cell = 0; cell < plane; ++cell) out.radar.data[c * plane + cell] *= 1.0 - m.data[cell];
  }
  return out;
}

WeightFeaturesGrad weight_features_backward(const FeatureMap& f_image, const FeatureMap& f_radar, const ConfidenceMap& m,
                                            const FeatureMap& grad_image, const FeatureMap& grad_radar) {
  const std::size_t plane = f_image.plane();
  WeightFeaturesGrad g{FeatureMap(f_image.channels, f_image.height, f_image.width),
                       FeatureMap(f_radar.channels, f_radar.height, f_radar.width), std::vector<double>(plane, 0.0)};
  for (std::size_t c = 0; c < f_image.channels; ++c) {
    for (std::size_t cell = 0; cell < plane; ++cell) {
      const std::size_t i = c * plane + cell;
      g.image.data[i] = m.data[cell] * grad_image.data[i];
      g.confidence[cell] += f_image.data[i] * grad_image.data[i];
    }
  }
  for (std::size_t c = 0; c < f_radar.channels; ++c) {
    for (std::size_t cell = 0; cell < plane; ++cell) {
      const std::size_t i = c * plane + cell;
      g.radar.data[i] = (1.0 - m.data[cell]) * grad_radar.data[i];
      g.confidence[cell] -= f_radar.data[i] * grad_radar.data[i];
    }
  }
  return g;
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  require_spatial_match(a, b, "concat_channels");
  FeatureMap out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

FeatureMap apply_affine(const FeatureMap& f, const Affine& affine) {
  require_channels(f, affine.in, "apply_affine");
  FeatureMap out(affine.out, f.height, f.width);
  const std::size_t plane = f.plane();
  for (std::size_t o = 0; o < affine.out; ++o) {
    double* dst = out.data.data() + o * plane;
    std::fill(dst, dst + plane, affine.bias[o]);
    for (std::size_t i = 0; i < affine.in; ++i) {
      const double wt = affine.w(o, i);
      const double* src = f.data.data() + i * plane;
      for (std::size_t cell = 0; cell < plane; ++cell) dst[cell] += wt * src[cell];
    }
  }
  return out;
}

FeatureMap apply_affine_backward(const Affine& affine, const FeatureMap& grad_out) {
  require_channels(grad_out, affine.out, "apply_affine_backward");
  FeatureMap grad(affine.in, grad_out.height, grad_out.width);
  const std::size_t plane = grad_out.plane();
  for (std::size_t o = 0; o < affine.out; ++o) {
    const double* src = grad_out.data.data() + o * plane;
    for (std::size_t i = 0; i < affine.in; ++i) {
      const double wt = affine.w(o, i);
      double* dst = grad.data.data() + i * plane;
      for (std::size_t cell = 0; cell < plane; ++cell) dst[cell] += wt * src[cell];
    }
  }
  return grad;
}

FeatureMap aggregate(const FeatureMap& f_image, const FeatureMap& f_radar, const FusionParams& params) {
  require_spatial_match(f_image, f_radar, "aggregate");
  const FeatureMap cat = concat_channels(layer_norm(f_image, params.ln_image), layer_norm(f_radar, params.ln_radar));
  return apply_affine(cat, params.agg_w);
}

FeatureGradPair aggregate_backward(const FeatureMap& f_image, const FeatureMap& f_radar, const FusionParams& params,
                                   const FeatureMap& grad_out) {
  require_spatial_match(f_image, f_radar, "aggregate_backward");
  const FeatureMap g_cat = apply_affine_backward(params.agg_w, grad_out);
  return {layer_norm_backward(f_image, params.ln_image, split_channels(g_cat, 0, f_image.channels)),
          layer_norm_backward(f_radar, params.ln_radar, split_channels(g_cat, f_image.channels, f_radar.channels))};
}

FeatureMap concat_mm(const FeatureMap& weighted_image, const FeatureMap& weighted_radar, const FusionParams& params) {
  require_spatial_match(weighted_image, weighted_radar, "concat_mm");
  return concat_channels(layer_norm(weighted_image, params.ln_weighted_image),
                         layer_norm(weighted_radar, params.ln_weighted_radar));
}

FeatureGradPair concat_mm_backward(const FeatureMap& weighted_image, const FeatureMap& weighted_radar,
                                   const FusionParams& params, const FeatureMap& grad_out) {
  require_spatial_match(weighted_image, weighted_radar, "concat_mm_backward");
  const std::size_t ci = weighted_image.channels;
  return {layer_norm_backward(weighted_image, params.ln_weighted_image, split_channels(grad_out, 0, ci)),
          layer_norm_backward(weighted_radar, params.ln_weighted_radar,
                              split_channels(grad_out, ci, weighted_radar.channels))};
}

double bilinear_sample(const FeatureMap& f, std::size_t channel, double y, double x) {
  return bilinear_read(f, channel, bilinear_setup(y, x, f.height, f.width));
}

std::vector<SampleLocation> sampling_locations(const FeatureMap& query, const DeformAttnParams& attn) {
  check_attn(attn, query.channels, "sampling_locations");
  const std::size_t n = attn.heads * attn.points;
  std::vector<SampleLocation> locs;
  locs.reserve(query.plane() * n);
  const std::size_t plane = query.plane();
  for (std::size_t h = 0; h < query.height; ++h) {
    for (std::size_t w = 0; w < query.width; ++w) {
      const std::size_t cell = h * query.width + w;
      for (std::size_t s = 0; s < n; ++s) {
        double dx = attn.offset.bias[2 * s];
        double dy = attn.offset.bias[2 * s + 1];
        for (std::size_t c = 0; c < query.channels; ++c) {
          dx += attn.offset.w(2 * s, c) * query.data[c * plane + cell];
          dy += attn.offset.w(2 * s + 1, c) * query.data[c * plane + cell];
        }
        locs.push_back({static_cast<double>(w) + dx, static_cast<double>(h) + dy});
      }
    }
  }
  return locs;
}

FeatureMap deform_cross_attention(const FeatureMap& query, const FeatureMap& value, const DeformAttnParams& attn) {
  check_attn(attn, query.channels, "deform_cross_attention");
  require_channels(value, attn.value_channels, "deform_cross_attention value");
  require_spatial_match(query, value, "deform_cross_attention");
  return apply_affine(attention_samples(query, value, attn), attn.output);
}

FeatureGradPair deform_cross_attention_backward(const FeatureMap& query, const FeatureMap& value,
                                                const DeformAttnParams& a, const FeatureMap& grad_out) {
  check_attn(a, query.channels, "deform_cross_attention_backward");
  require_channels(value, a.value_channels, "deform_cross_attention_backward value");
  require_spatial_match(query, value, "deform_cross_attention_backward");
  const FeatureMap g_sampled = apply_affine_backward(a.output, grad_out);
  const std::size_t per_head = a.value_channels / a.heads;
  const std::size_t plane = query.plane();
  FeatureGradPair g{FeatureMap(query.channels, query.height, query.width),
                    FeatureMap(value.channels, value.height, value.width)};
  const std::size_t n = a.heads * a.points;
  std::vector<double> g_attn(n), g_logit(n), g_dx(n), g_dy(n);

  for (std::size_t h = 0; h < query.height; ++h) {
    for (std::size_t w = 0; w < query.width; ++w) {
      const std::size_t cell = h * query.width + w;
      const AttnCell fwd = attn_cell(query, value, a, h, w);
      std::fill(g_attn.begin(), g_attn.end(), 0.0);
      std::fill(g_dx.begin(), g_dx.end(), 0.0);
      std::fill(g_dy.begin(), g_dy.end(), 0.0);
      for (std::size_t k = 0; k < a.heads; ++k) {
        for (std::size_t p = 0; p < a.points; ++p) {
          const std::size_t s = k * a.points + p;
          const Bilinear& b = fwd.taps[s];
          const double wt = fwd.attn[s];
          for (std::size_t d = 0; d < per_head; ++d) {
            const std::size_t ch = k * per_head + d;
            const double gs = g_sampled.at(ch, h, w);
            if (gs == 0.0) continue;
            const double v00 = value.at(ch, b.y0, b.x0);
            const double v01 = value.at(ch, b.y0, b.x1);
            const double v10 = value.at(ch, b.y1, b.x0);
            const double v11 = value.at(ch, b.y1, b.x1);
            const double sample =
                (1.0 - b.fy) * ((1.0 - b.fx) * v00 + b.fx * v01) + b.fy * ((1.0 - b.fx) * v10 + b.fx * v11);
            g_attn[s] += gs * sample;
            const double gv = gs * wt;
            g.second.at(ch, b.y0, b.x0) += gv * (1.0 - b.fy) * (1.0 - b.fx);
            g.second.at(ch, b.y0, b.x1) += gv * (1.0 - b.fy) * b.fx;
            g.second.at(ch, b.y1, b.x0) += gv * b.fy * (1.0 - b.fx);
            g.second.at(ch, b.y1, b.x1) += gv * b.fy * b.fx;
            if (b.x_inside) g_dx[s] += gv * ((1.0 - b.fy) * (v01 - v00) + b.fy * (v11 - v10));
            if (b.y_inside) g_dy[s] += gv * ((1.0 - b.fx) * (v10 - v00) + b.fx * (v11 - v01));
          }
        }
        // Softmax over the head's points.
        double dot = 0.0;
        for (std::size_t p = 0; p < a.points; ++p) dot += fwd.attn[k * a.points + p] * g_attn[k * a.points + p];
        for (std::size_t p = 0; p < a.points; ++p) {
          const std::size_t s = k * a.points + p;
          g_logit[s] = fwd.attn[s] * (g_attn[s] - dot);
        }
      }
      for (std::size_t c = 0; c < query.channels; ++c) {
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          acc += a.weight.w(s, c) * g_logit[s] + a.offset.w(2 * s, c) * g_dx[s] + a.offset.w(2 * s + 1, c) * g_dy[s];
        }
        g.first.data[c * plane + cell] += acc;
      }
    }
  }
  return g;
}

FeatureMap conv3x3(const FeatureMap& f, const Conv3x3& conv) {
  require_channels(f, conv.channels, "conv3x3");
  const std::size_t C = conv.channels;
  FeatureMap out(C, f.height, f.width);
  const auto H = static_cast<long>(f.height), W = static_cast<long>(f.width);
  for (std::size_t o = 0; o < C; ++o) {
    for (long h = 0; h < H; ++h) {
      for (long w = 0; w < W; ++w) {
        double acc = conv.bias[o];
        for (std::size_t i = 0; i < C; ++i) {
          for (long ky = 0; ky < 3; ++ky) {
            const long y = h + ky - 1;
            if (y < 0 || y >= H) continue;
            for (long kx = 0; kx < 3; ++kx) {
              const long x = w + kx - 1;
              if (x < 0 || x >= W) continue;
              acc += conv.weight[((o * C + i) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)] *
                     f.at(i, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            }
          }
        }
        out.at(o, static_cast<std::size_t>(h), static_cast<std::size_t>(w)) = acc;
      }
    }
  }
  return out;
}

FeatureMap conv3x3_backward(const Conv3x3& conv, const FeatureMap& grad_out) {
  require_channels(grad_out, conv.channels, "conv3x3_backward");
  const std::size_t C = conv.channels;
  FeatureMap grad(C, grad_out.height, grad_out.width);
  const auto H = static_cast<long>(grad_out.height), W = static_cast<long>(grad_out.width);
  for (std::size_t o = 0; o < C; ++o) {
    for (long h = 0; h < H; ++h) {
      for (long w = 0; w < W; ++w) {
        const double g = grad_out.at(o, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
        for (std::size_t i = 0; i < C; ++i) {
          for (long ky = 0; ky < 3; ++ky) {
            const long y = h + ky - 1;
            if (y < 0 || y >= H) continue;
            for (long kx = 0; kx < 3; ++kx) {
              const long x = w + kx - 1;
              if (x < 0 || x >= W) continue;
              grad.at(i, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) +=
                  conv.weight[((o * C + i) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)] * g;
            }
          }
        }
      }
    }
  }
  return grad;
}

FeatureMap fuse_bev(const FeatureMap& f_image, const FeatureMap& f_radar, const FusionParams& params) {
  params.validate();
  require_channels(f_image, params.channels, "fuse_bev image");
  require_channels(f_radar, params.channels, "fuse_bev radar");
  require_spatial_match(f_image, f_radar, "fuse_bev");
  const FeatureMap query = aggregate(f_image, f_radar, params);
  const ConfidenceMap m = confidence_map(f_image, params.conf_mlp);
  const WeightedFeatures weighted = weight_features(f_image, f_radar, m);
  const FeatureMap f_mm = concat_mm(weighted.image, weighted.radar, params);
  const FeatureMap plain = concat_channels(f_image, f_radar);
  FeatureMap sum = deform_cross_attention(query, plain, params.attn_plain);
  add_into(sum, deform_cross_attention(query, f_mm, params.attn_conf));
  return conv3x3(sum, params.out_conv);
}

FeatureGradPair fuse_bev_backward(const FeatureMap& f_image, const FeatureMap& f_radar, const FusionParams& params,
                                  const FeatureMap& grad_out) {
  params.validate();
  require_channels(f_image, params.channels, "fuse_bev_backward image");
  require_channels(f_radar, params.channels, "fuse_bev_backward radar");
  require_spatial_match(f_image, f_radar, "fuse_bev_backward");
  const std::size_t C = params.channels;
  const FeatureMap query = aggregate(f_image, f_radar, params);
  const ConfidenceMap m = confidence_map(f_image, params.conf_mlp);
  const WeightedFeatures weighted = weight_features(f_image, f_radar, m);
  const FeatureMap f_mm = concat_mm(weighted.image, weighted.radar, params);
  const FeatureMap plain = concat_channels(f_image, f_radar);

  const FeatureMap g_sum = conv3x3_backward(params.out_conv, grad_out);
  const FeatureGradPair g_plain_branch = deform_cross_attention_backward(query, plain, params.attn_plain, g_sum);
  const FeatureGradPair g_conf_branch = deform_cross_attention_backward(query, f_mm, params.attn_conf, g_sum);

  FeatureMap g_query = g_plain_branch.first;
  add_into(g_query, g_conf_branch.first);
  FeatureGradPair g = aggregate_backward(f_image, f_radar, params, g_query);

  add_into(g.first, split_channels(g_plain_branch.second, 0, C));
  add_into(g.second, split_channels(g_plain_branch.second, C, C));

  const FeatureGradPair g_weighted = concat_mm_backward(weighted.image, weighted.radar, params, g_conf_branch.second);
  const WeightFeaturesGrad g_wf = weight_features_backward(f_image, f_radar, m, g_weighted.first, g_weighted.second);
  add_into(g.first, g_wf.image);
  add_into(g.second, g_wf.radar);
  add_into(g.first, confidence_map_backward(f_image, params.conf_mlp, g_wf.confidence));
  return g;
}

// Parameter file ---------------------------------------------------------------

namespace {

struct Block {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  std::vector<double>* data;
};

std::vector<Block> param_blocks(FusionParams& p) {
  std::vector<Block> blocks;
  const std::size_t C = p.channels;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols, std::vector<double>& vec) {
    blocks.push_back({std::move(name), rows, cols, &vec});
  };
  auto add_ln = [&](const std::string& name, auto& ln) {
    add(name + ".scale", 1, C, ln.scale);
    add(name + ".shift", 1, C, ln.shift);
  };
  auto add_affine = [&](const std::string& name, auto& a) {
    add(name + ".weight", a.out, a.in, a.weight);
    add(name + ".bias", 1, a.out, a.bias);
  };
  auto add_attn = [&](const std::string& name, auto& a) {
    add_affine(name + ".offset", a.offset);
    add_affine(name + ".weight", a.weight);
    add_affine(name + ".output", a.output);
  };
  add_ln("ln_image", p.ln_image);
  add_ln("ln_radar", p.ln_radar);
  add_ln("ln_weighted_image", p.ln_weighted_image);
  add_ln("ln_weighted_radar", p.ln_weighted_radar);
  add_affine("conf_mlp.hidden", p.conf_mlp.hidden);
  add_affine("conf_mlp.logits", p.conf_mlp.logits);
  add_affine("agg_w", p.agg_w);
  add_attn("attn_plain", p.attn_plain);
  add_attn("attn_conf", p.attn_conf);
  add("out_conv.weight", C, C * 9, p.out_conv.weight);
  add("out_conv.bias", 1, C, p.out_conv.bias);
  return blocks;
}

constexpr std::size_t kHeaderBytes = 4 + 4 + 5 * 4;

FusionParams shaped_params(std::size_t C, std::size_t heads, std::size_t points) {
  FusionParams p;
  p.channels = C;
  for (LayerNormParams* ln : {&p.ln_image, &p.ln_radar, &p.ln_weighted_image, &p.ln_weighted_radar}) {
    *ln = LayerNormParams::identity(C);
  }
  p.conf_mlp.hidden = Affine(C, kConfidenceHidden);
  p.conf_mlp.logits = Affine(kConfidenceHidden, 2);
  p.agg_w = Affine(2 * C, C);
  for (DeformAttnParams* a : {&p.attn_plain, &p.attn_conf}) {
    a->heads = heads;
    a->points = points;
    a->value_channels = 2 * C;
    a->offset = Affine(C, heads * points * 2);
    a->weight = Affine(C, heads * points);
    a->output = Affine(2 * C, C);
  }
  p.out_conv.channels = C;
  p.out_conv.weight.assign(C * C * 9, 0.0);
  p.out_conv.bias.assign(C, 0.0);
  return p;
}

}  // namespace

std::string fusion_params_manifest(const FusionParams& params) {
  std::ostringstream out;
  std::size_t offset = kHeaderBytes;
  FusionParams copy = params;
  out << "# name rows cols byte_offset\n";
  for (const Block& b : param_blocks(copy)) {
    out << b.name << ' ' << b.rows << ' ' << b.cols << ' ' << offset << '\n';
    offset += b.rows * b.cols * sizeof(double);
  }
  return out.str();
}

void write_fusion_params(const std::filesystem::path& path, const FusionParams& params, std::size_t height,
                         std::size_t width) {
  params.validate();
  if (params.attn_plain.heads != params.attn_conf.heads || params.attn_plain.points != params.attn_conf.points) {
    throw std::invalid_argument("write_fusion_params: branches must share head and point counts");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("CMCA", 4);
  detail::put_u32(out, kFusionParamsFormatVersion);
  for (std::size_t d : {params.channels, height, width, params.attn_plain.heads, params.attn_plain.points}) {
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  FusionParams copy = params;
  for (const Block& b : param_blocks(copy)) {
    for (double v : *b.data) detail::put_f64(out, v);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
  std::filesystem::path manifest = path;
  manifest += ".manifest";
  std::ofstream man(manifest);
  if (!man) throw std::runtime_error("cannot write " + manifest.string());
  man << fusion_params_manifest(params);
}

FusionParamsFile read_fusion_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  detail::expect_magic(in, "CMCA");
  const std::uint32_t version = detail::get_u32(in);
  if (version != kFusionParamsFormatVersion) throw std::runtime_error("unsupported CMCA version " + std::to_string(version));
  const std::size_t C = detail::get_u32(in);
  const std::size_t H = detail::get_u32(in);
  const std::size_t W = detail::get_u32(in);
  const std::size_t heads = detail::get_u32(in);
  const std::size_t points = detail::get_u32(in);
  if (C == 0 || heads == 0 || points == 0) throw std::runtime_error(path.string() + ": invalid CMCA dimensions");
  FusionParamsFile file{shaped_params(C, heads, points), H, W};
  for (const Block& b : param_blocks(file.params)) {
    for (double& v : *b.data) v = detail::get_f64(in);
  }
  file.params.validate();
  return file;
}

}  // namespace rcr
