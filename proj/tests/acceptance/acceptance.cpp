// Acceptance run: one PASS/FAIL line per criterion.
//
// Exit status is nonzero when any criterion fails that is not listed with
// --known-failure. Known failures are still reported as FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "CLI11.hpp"

#include "gradcheck.hpp"
#include "rcr/bench.hpp"
#include "rcr/cmca_fusion.hpp"
#include "rcr/constants.hpp"
#include "rcr/image_corruption.hpp"
#include "rcr/radar_corruption.hpp"
#include "rcr/voxel_3dge.hpp"
#include "support.hpp"

using namespace rcr;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  std::string first_failure;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      first_failure = what;
      pass = false;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool within_band(double measured, double target, double rel) { return std::abs(measured - target) <= rel * target; }

// 1. Empirical spreads of the Gaussian corruptions.
void corruption_statistics(Outcome& out) {
  const auto t0 = Clock::now();
  constexpr std::size_t n = 100000;
  const GridSpec grid = default_grid();
  double worst = 0.0;
  for (double sigma : {1.0, 5.0, 10.0, 50.0}) {
    PointCloud base;
    base.points.assign(n, RadarPoint{1.0, -2.0, 0.5, 4.0, -1.0});
    Rng rng(1000 + static_cast<std::uint64_t>(sigma));

    auto check_dims = [&](const PointCloud& c, std::size_t from, std::initializer_list<int> dims, const char* name) {
      for (int d : dims) {
        std::vector<double> xs;
        xs.reserve(c.size() - from);
        for (std::size_t i = from; i < c.size(); ++i) {
          const RadarPoint& p = c.points[i];
          const double vals[5] = {p.x - 1.0, p.y + 2.0, p.z - 0.5, p.rcs - 4.0, p.v + 1.0};
          xs.push_back(vals[d]);
        }
        const double sd = testsupport::stddev(xs);
        worst = std::max(worst, std::abs(sd - sigma) / sigma);
        out.require(within_band(sd, sigma, 0.02), std::string(name) + " sigma " + std::to_string(sigma));
      }
    };
    check_dims(point_shift(base, sigma, rng), 0, {0, 1, 2}, "point_shift");
    check_dims(non_positional_disturbance(base, sigma, rng), 0, {3, 4}, "non_positional");
    check_dims(spurious_points(base, SpuriousMode::PointRelated, 1.0, sigma, grid, rng), n, {0, 1, 2, 3, 4},
               "spurious");
  }
  const double t = seconds_since(t0);
  out.require(t < 10.0, "runtime");
  out.detail << "worst relative std error " << worst << ", " << t << " s";
}

// 2. Exact output sizes on random clouds.
void count_laws(Outcome& out) {
  Rng rng(2);
  const GridSpec grid = default_grid();
  std::size_t clouds = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(300);
    const PointCloud c = testsupport::random_cloud(rng, n, 30.0);
    ++clouds;

    const std::size_t k = 1 + rng.below(n / 2);
    out.require(key_point_missing(c, {}, 0, k, rng).size() == n - k, "key_point_missing gamma 0");

    std::vector<BoxAnnotation> boxes{{{rng.uniform(-20, 20), rng.uniform(-20, 20), -1}, rng.uniform(4, 20),
                                      rng.uniform(4, 20), 6, rng.uniform(-3, 3)}};
    std::size_t eligible = 0;
    for (const RadarPoint& p : c.points) eligible += testsupport::polygon_membership(p.x, p.y, p.z, boxes[0]);
    const std::size_t kb = 1 + rng.below(constants::kMaxInBoxRemoval);
    out.require(key_point_missing(c, boxes, 1, kb, rng).size() == n - std::min(kb, eligible),
                "key_point_missing gamma 1");

    const double ratio = rng.uniform(0.05, 1.0);
    const std::size_t added = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio * n)));
    for (auto mode : {SpuriousMode::PointRelated, SpuriousMode::Random}) {
      out.require(spurious_points(c, mode, ratio, 3.0, grid, rng).size() == n + added, "spurious_points");
    }

    out.require(point_shift(c, rng.uniform(1, 50), rng).size() == n, "point_shift");

    const std::size_t beams = constants::kDefaultBeamCount;
    const std::size_t drop = rng.below(beams + 1);
    const PointCloud dropped = beam_drop(c, beams, drop, rng);
    std::set<std::size_t> all, kept;
    for (const RadarPoint& p : c.points) all.insert(beam_sector(p.x, p.y, beams));
    for (const RadarPoint& p : dropped.points) kept.insert(beam_sector(p.x, p.y, beams));
    std::size_t expected = 0;
    for (const RadarPoint& p : c.points) expected += kept.count(beam_sector(p.x, p.y, beams));
    out.require(dropped.size() == expected, "beam_drop keeps whole sectors");
    // Removed sectors are exactly `drop` when every sector is populated.
    if (all.size() == beams) out.require(all.size() - kept.size() == drop, "beam_drop sector count");
    else out.require(all.size() - kept.size() <= drop, "beam_drop sector bound");
  }
  out.detail << clouds << " clouds";
}

// 3. Kernel normalization, lambda 1 identity, interior mass.
void kernel_suite(Outcome& out) {
  std::size_t combos = 0;
  double worst = 0.0;
  for (int lambda : constants::kKernelSizes) {
    for (double sigma : {0.1, 0.5, 1.0, 5.0, 50.0}) {
      for (auto mode : {ExponentMode::PlanarXY, ExponentMode::Isotropic3D}) {
        const Kernel k = build_kernel({lambda, sigma}, mode);
        long double s = 0.0L;
        for (double w : k.weights) s += w;
        worst = std::max(worst, std::abs(static_cast<double>(s) - 1.0));
        ++combos;
      }
    }
  }
  out.require(combos == 30, "30 combinations");
  out.require(worst <= 1e-12, "kernel sums");

  const GridSpec g = default_grid();
  Rng rng(3);
  const PointCloud c = testsupport::random_cloud(rng, 2000, 51.0);
  const std::vector<KernelParams> ones(c.size(), KernelParams{1, 0.5});
  for (auto mode : {ExponentMode::PlanarXY, ExponentMode::Isotropic3D}) {
    out.require(expand(c, g, ones, mode) == voxelize(c, g).grid, "lambda 1 identity");
  }

  GridSpec small;
  small.x_range = {-8, 8};
  small.y_range = {-8, 8};
  small.z_range = {-2, 2};
  small.cells = {16, 16, 8};
  const Vec3 cs = small.cell_size();
  double mass_err = 0.0;
  for (int lambda : {3, 5}) {
    const int m = (lambda - 1) / 2;
    PointCloud inner;
    for (int i = 0; i < 500; ++i) {
      inner.points.push_back({rng.uniform(-8 + m * cs.x, 8 - m * cs.x - 1e-9), rng.uniform(-8 + m * cs.y, 8 - m * cs.y - 1e-9),
                              rng.uniform(-2 + m * cs.z, 2 - m * cs.z - 1e-9), rng.uniform(0, 10), rng.uniform(-3, 3)});
    }
    std::vector<KernelParams> params;
    for (std::size_t i = 0; i < inner.size(); ++i) params.push_back({lambda, rng.uniform(0.2, 3.0)});
    for (auto mode : {ExponentMode::PlanarXY, ExponentMode::Isotropic3D}) {
      const VoxelGrid e = expand(inner, small, params, mode);
      long double in_rcs = 0.0L, out_rcs = 0.0L, in_v = 0.0L, out_v = 0.0L;
      for (const RadarPoint& p : inner.points) {
        in_rcs += p.rcs;
        in_v += p.v;
      }
      for (double v : e.rcs) out_rcs += v;
      for (double v : e.vel) out_v += v;
      mass_err = std::max({mass_err, static_cast<double>(std::abs(in_rcs - out_rcs)),
                           static_cast<double>(std::abs(in_v - out_v))});
    }
  }
  out.require(mass_err <= 1e-9, "interior mass");
  out.detail << "max |sum-1| " << worst << ", max mass error " << mass_err;
}

// 4. Scaled peak-consistency reproduction on the scripted scene.
void peak_reproduction(Outcome& out) {
  const auto t0 = Clock::now();
  SweepConfig cfg = default_sweep_config();
  cfg.corruptions.clear();
  cfg.levels.clear();
  for (auto kind : {CorruptionKind::SpuriousPoints, CorruptionKind::PointShifting,
                    CorruptionKind::NonPositionalDisturbance}) {
    CorruptionSpec spec;
    spec.kind = kind;
    cfg.corruptions.push_back(spec);
    cfg.levels[kind] = {5.0};
  }
  cfg.replicates = 100;
  cfg.pipelines = {Pipeline::GaussianPlanar};
  const BenchReport r = run_sweep(cfg, {4, false});
  for (std::size_t k = 0; k < cfg.corruptions.size(); ++k) {
    std::size_t hits = 0;
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < 100; ++i) {
      const BenchRow& row = r.rows[k * 100 + i];
      out.require(row.error.empty(), "row error: " + row.error);
      hits += row.peak_consistent;
      before += row.snr_before;
      after += row.snr_after;
    }
    const auto kind = cfg.corruptions[k].kind;
    out.detail << to_string(kind) << " " << hits << "/100";
    out.require(hits >= 95, std::string(to_string(kind)) + " argmax " + std::to_string(hits) + "/100");
    if (kind == CorruptionKind::SpuriousPoints) {
      out.detail << " (snr " << before / 100 << " -> " << after / 100 << ")";
      out.require(after >= before, "spurious snr");
    }
    out.detail << "; ";
  }
  const double t = seconds_since(t0);
  out.require(t < 30.0, "runtime");
  out.detail << t << " s";
}

// 5. Finite-difference checks of every fusion operation.
void gradient_suite(Outcome& out) {
  using gradcheck::flat;
  using gradcheck::slice;
  using gradcheck::Vec;
  const auto t0 = Clock::now();
  constexpr std::size_t C = 8, H = 5, W = 5, n = C * H * W;
  Rng rng(5);
  const FusionParams p = random_fusion_params(C, rng);
  FeatureMap fi(C, H, W), fp(C, H, W), v2(2 * C, H, W);
  for (double& x : fi.data) x = rng.normal();
  for (double& x : fp.data) x = rng.normal();
  for (double& x : v2.data) x = rng.normal();
  ConfidenceMap m{H, W, {}};
  for (std::size_t i = 0; i < H * W; ++i) m.data.push_back(rng.uniform(0.1, 0.9));

  auto record = [&](const char* name, const gradcheck::Result& r, double tol) {
    out.require(r.probes == 20 && r.max_rel_error <= tol, name);
    out.detail << name << " " << r.max_rel_error << "; ";
  };

  record("layer_norm",
         gradcheck::check([&](const Vec& x) { return layer_norm(slice(x, 0, C, H, W), p.ln_image).data; },
                          [&](const Vec& x, const Vec& u) {
                            return layer_norm_backward(slice(x, 0, C, H, W), p.ln_image, slice(u, 0, C, H, W)).data;
                          },
                          fi.data, rng),
         1e-4);
  record("confidence_map",
         gradcheck::check([&](const Vec& x) { return confidence_map(slice(x, 0, C, H, W), p.conf_mlp).data; },
                          [&](const Vec& x, const Vec& u) {
                            return confidence_map_backward(slice(x, 0, C, H, W), p.conf_mlp, u).data;
                          },
                          fi.data, rng),
         1e-4);
  {
    Vec x = flat(fi, fp);
    x.insert(x.end(), m.data.begin(), m.data.end());
    auto conf = [&](const Vec& v) { return ConfidenceMap{H, W, Vec(v.begin() + 2 * n, v.end())}; };
    record("weight_features",
           gradcheck::check(
               [&](const Vec& v) {
                 const auto wf = weight_features(slice(v, 0, C, H, W), slice(v, n, C, H, W), conf(v));
                 return flat(wf.image, wf.radar);
               },
               [&](const Vec& v, const Vec& u) {
                 const auto g = weight_features_backward(slice(v, 0, C, H, W), slice(v, n, C, H, W), conf(v),
                                                         slice(u, 0, C, H, W), slice(u, n, C, H, W));
                 Vec r = flat(g.image, g.radar);
                 r.insert(r.end(), g.confidence.begin(), g.confidence.end());
                 return r;
               },
               x, rng),
           1e-4);
  }
  record("apply_affine",
         gradcheck::check([&](const Vec& x) { return apply_affine(slice(x, 0, 2 * C, H, W), p.agg_w).data; },
                          [&](const Vec&, const Vec& u) { return apply_affine_backward(p.agg_w, slice(u, 0, C, H, W)).data; },
                          v2.data, rng),
         1e-4);
  record("aggregate",
         gradcheck::check(
             [&](const Vec& x) { return aggregate(slice(x, 0, C, H, W), slice(x, n, C, H, W), p).data; },
             [&](const Vec& x, const Vec& u) {
               const auto g = aggregate_backward(slice(x, 0, C, H, W), slice(x, n, C, H, W), p, slice(u, 0, C, H, W));
               return flat(g.first, g.second);
             },
             flat(fi, fp), rng),
         1e-4);
  record("concat_mm",
         gradcheck::check(
             [&](const Vec& x) { return concat_mm(slice(x, 0, C, H, W), slice(x, n, C, H, W), p).data; },
             [&](const Vec& x, const Vec& u) {
               const auto g =
                   concat_mm_backward(slice(x, 0, C, H, W), slice(x, n, C, H, W), p, slice(u, 0, 2 * C, H, W));
               return flat(g.first, g.second);
             },
             flat(fi, fp), rng),
         1e-4);
  record("conv3x3",
         gradcheck::check([&](const Vec& x) { return conv3x3(slice(x, 0, C, H, W), p.out_conv).data; },
                          [&](const Vec&, const Vec& u) { return conv3x3_backward(p.out_conv, slice(u, 0, C, H, W)).data; },
                          fi.data, rng),
         1e-4);
  record("deform_cross_attention",
         gradcheck::check(
             [&](const Vec& x) {
               return deform_cross_attention(slice(x, 0, C, H, W), slice(x, n, 2 * C, H, W), p.attn_conf).data;
             },
             [&](const Vec& x, const Vec& u) {
               const auto g = deform_cross_attention_backward(slice(x, 0, C, H, W), slice(x, n, 2 * C, H, W),
                                                              p.attn_conf, slice(u, 0, C, H, W));
               return flat(g.first, g.second);
             },
             flat(fi, v2), rng, 20, 1e-5,
             [&](const Vec& x) { return gradcheck::sampling_signature(slice(x, 0, C, H, W), p.attn_conf, H, W); }),
         1e-3);
  record("fuse_bev",
         gradcheck::check(
             [&](const Vec& x) { return fuse_bev(slice(x, 0, C, H, W), slice(x, n, C, H, W), p).data; },
             [&](const Vec& x, const Vec& u) {
               const auto g = fuse_bev_backward(slice(x, 0, C, H, W), slice(x, n, C, H, W), p, slice(u, 0, C, H, W));
               return flat(g.first, g.second);
             },
             flat(fi, fp), rng, 20, 1e-5,
             [&](const Vec& x) {
               const FeatureMap q = aggregate(slice(x, 0, C, H, W), slice(x, n, C, H, W), p);
               auto sig = gradcheck::sampling_signature(q, p.attn_plain, H, W);
               const auto more = gradcheck::sampling_signature(q, p.attn_conf, H, W);
               sig.insert(sig.end(), more.begin(), more.end());
               return sig;
             }),
         1e-3);
  const double t = seconds_since(t0);
  out.require(t < 20.0, "runtime");
  out.detail << t << " s";
}

// 6. Algebraic identities of the fusion block.
void algebraic_identities(Outcome& out) {
  constexpr std::size_t C = 8, H = 5, W = 5;
  Rng rng(6);
  const FusionParams p = random_fusion_params(C, rng);
  FeatureMap fi(C, H, W), fp(C, H, W);
  for (double& x : fi.data) x = 3.0 * rng.normal();
  for (double& x : fp.data) x = 3.0 * rng.normal();

  const ConfidenceMap m = confidence_map(fi, p.conf_mlp);
  double complement_err = 0.0;
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) complement_err = std::max(complement_err, std::abs(m.at(h, w) + m.complement(h, w) - 1.0));
  out.require(complement_err <= 1e-12, "confidence complement");

  auto diff = [](const FeatureMap& a, const FeatureMap& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
    return d;
  };
  const FeatureMap base = layer_norm(fi, p.ln_image);
  double ln_err = 0.0;
  for (double a : {0.5, 2.0, 10.0}) {
    FeatureMap s = fi;
    for (double& x : s.data) x *= a;
    ln_err = std::max(ln_err, diff(layer_norm(s, p.ln_image), base));
  }
  out.require(ln_err <= 1e-9, "layer norm scale invariance");

  const FeatureMap reference = concat_channels(layer_norm(fi, p.ln_weighted_image), layer_norm(fp, p.ln_weighted_radar));
  double mm_err = 0.0;
  for (double c : {0.25, 0.5, 0.9}) {
    const WeightedFeatures wf = weight_features(fi, fp, ConfidenceMap{H, W, std::vector<double>(H * W, c)});
    mm_err = std::max(mm_err, diff(concat_mm(wf.image, wf.radar, p), reference));
  }
  out.require(mm_err <= 1e-9, "concat_mm neutrality");
  out.detail << "complement " << complement_err << ", ln " << ln_err << ", concat_mm " << mm_err;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every regular file under `dir`, keyed by relative path.
std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

// 7. Repeated CLI runs give identical bytes.
void determinism(Outcome& out, const std::string& bench) {
  const auto dir = testsupport::scratch_dir("acceptance_determinism");
  {
    std::ofstream cfg(dir / "sweep.json");
    cfg << R"({"replicates": 3, "master_seed": 17, "pipelines": ["raw", "3dge_planar", "3dge_isotropic"]})";
  }
  auto run = [&](const std::string& name, int jobs) {
    const std::string cmd = bench + " run --config " + (dir / "sweep.json").string() + " --out-dir " +
                            (dir / name).string() + " --jobs " + std::to_string(jobs) + " --emit-heatmaps > /dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  };
  out.require(run("a", 1) && run("b", 1) && run("c", 4) && run("d", 4), "bench run exit status");
  if (!out.pass) return;
  const auto a = snapshot(dir / "a");
  std::size_t pgm = 0;
  for (const auto& [name, _] : a) pgm += name.ends_with(".pgm");
  out.require(a.count("report.csv") == 1, "report.csv written");
  out.require(pgm > 0, "heatmaps written");
  for (const char* other : {"b", "c", "d"}) out.require(snapshot(dir / other) == a, std::string("run ") + other + " differs");
  out.detail << a.size() << " files (" << pgm << " PGM) identical across 4 runs, jobs 1 and 4";
}

// 8. Defaults match the published settings.
void constants_conformance(Outcome& out) {
  const GridSpec g = default_grid();
  out.require(g.x_range.min == -51.2 && g.x_range.max == 51.2, "x range");
  out.require(g.y_range.min == -51.2 && g.y_range.max == 51.2, "y range");
  out.require(g.nx() == 128 && g.ny() == 128, "128 x 128 cells");
  out.require(std::abs(g.cell_size().x - 0.8) < 1e-12 && std::abs(g.cell_size().y - 0.8) < 1e-12, "0.8 m cells");

  Rng rng(8);
  const FusionParams p = random_fusion_params(8, rng);
  out.require(p.attn_plain.heads == 8 && p.attn_plain.points == 2, "8 heads / 2 points");
  out.require(p.attn_conf.heads == 8 && p.attn_conf.points == 2, "8 heads / 2 points (confidence branch)");

  out.require(constants::kKernelSizes == std::array<int, 3>{1, 3, 5}, "lambda domain");
  for (int l : {1, 3, 5}) out.require(std::find(constants::kKernelSizes.begin(), constants::kKernelSizes.end(), l) != constants::kKernelSizes.end(), "lambda");
  bool rejected = false;
  try {
    build_kernel({7, 1.0}, ExponentMode::PlanarXY);
  } catch (const std::invalid_argument&) {
    rejected = true;
  }
  out.require(rejected, "lambda 7 rejected");

  double lo = 1e9, hi = -1e9, sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double s = sample_sigma(rng);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
    sum += s;
  }
  out.require(lo >= 1.0 && hi <= 50.0 && lo < 1.1 && hi > 49.9, "sigma support U(1, 50)");
  out.require(std::abs(sum / 100000 - 25.5) < 0.3, "sigma mean");

  out.require(lowlight_gamma_band(Severity::Light).min == 1.0 && lowlight_gamma_band(Severity::Light).max == 2.0,
              "mild gamma band");
  out.require(lowlight_gamma_band(Severity::Heavy).min == 2.0 && lowlight_gamma_band(Severity::Heavy).max == 3.0,
              "heavy gamma band");

  out.require(constants::kCleanRatio == 0.8, "clean ratio");
  std::size_t noisy = 0;
  for (const auto& e : gen_manifest(1000, constants::kCleanRatio, 8)) noisy += e.noisy;
  out.require(noisy == 200, "manifest 8:2 split");
  out.detail << "grid, attention, kernel sizes, sigma sampler [" << lo << ", " << hi << "], gamma bands, clean ratio";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string bench = RCR_BENCH_EXE;
  std::vector<int> known;
  app.add_option("--bench", bench, "bench executable");
  app.add_option("--known-failure", known, "criterion allowed to fail without failing the run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria{
      {"corruption statistics", corruption_statistics},
      {"count laws", count_laws},
      {"kernel suite", kernel_suite},
      {"peak consistency on the scripted scene", peak_reproduction},
      {"fusion gradient checks", gradient_suite},
      {"fusion algebraic identities", algebraic_identities},
      {"bench determinism", [&](Outcome& o) { determinism(o, bench); }},
      {"default constants", constants_conformance},
  };
  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const int id = static_cast<int>(i + 1);
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << "  ["
              << o.detail.str() << "]";
    if (!o.pass) std::cout << "  first failure: " << o.first_failure;
    std::cout << std::endl;
    if (!o.pass && std::find(known.begin(), known.end(), id) == known.end()) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
