#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "histosim/core_data.hpp"
#include "histosim/util.hpp"

namespace histosim {

enum class DistortionKind { Shift, Rotate, Elastic };

inline const char* to_string(DistortionKind k) {
  switch (k) {
    case DistortionKind::Shift: return "shift";
    case DistortionKind::Rotate: return "rotate";
    case DistortionKind::Elastic: return "elastic";
  }
  return "?";
}

inline DistortionKind parse_distortion_kind(const std::string& s) {
  if (s == "shift") return DistortionKind::Shift;
  if (s == "rotate") return DistortionKind::Rotate;
  if (s == "elastic") return DistortionKind::Elastic;
  throw Error(errc::kParse, "unknown distortion kind '" + s + "'");
}

/// Ordered distortion magnitudes with delta_0 = 0. Units: image fraction
/// (shift), degrees (rotate), control-point displacement in pixels (elastic).
struct DistortionGrid {
  DistortionKind kind;
  std::vector<double> levels;
};

inline void validate(const DistortionGrid& g) {
  if (g.levels.size() < 2) throw Error(errc::kInvalidArgument, "distortion grid needs at least two levels");
  if (g.levels.front() != 0.0) throw Error(errc::kInvalidArgument, "distortion grid must start at 0");
  for (std::size_t i = 1; i < g.levels.size(); ++i)
    if (!(g.levels[i] > g.levels[i - 1]))
      throw Error(errc::kInvalidArgument, "distortion levels must be strictly increasing");
}

inline DistortionGrid default_grid(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::Shift: return {kind, {0.0, 0.005, 0.01, 0.02, 0.04}};
    case DistortionKind::Rotate: return {kind, {0.0, 2.0, 4.0, 8.0, 12.0}};
    case DistortionKind::Elastic: return {kind, {0.0, 1.0, 3.0, 6.0, 9.0, 12.0}};
  }
  return {kind, {}};
}

inline std::vector<DistortionGrid> default_grids() {
  return {default_grid(DistortionKind::Shift), default_grid(DistortionKind::Rotate),
          default_grid(DistortionKind::Elastic)};
}

inline constexpr double kCropFraction = 0.75;

/// Central crop keeping floor(0.75 * side) per axis (256 -> 192, offset 32).
inline Patch crop_valid(const Patch& p, double fraction = kCropFraction) {
  if (p.width() < 64 || p.height() < 64) throw Error(errc::kInvalidArgument, "crop_valid needs at least 64x64 input");
  const int w = static_cast<int>(std::floor(fraction * p.width()));
  const int h = static_cast<int>(std::floor(fraction * p.height()));
  const int ox = (p.width() - w) / 2, oy = (p.height() - h) / 2;
  Patch out(w, h, p.colorspace());
  for (int c = 0; c < p.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = p.at(c, y + oy, x + ox);
  return out;
}

namespace detail {

/// Continuous reflect-101 of a coordinate into [0, n-1].
inline double reflect_coord(double x, int n) {
  if (n == 1) return 0.0;
  const double period = 2.0 * (n - 1);
  x = std::fmod(x, period);
  if (x < 0.0) x += period;
  return x > n - 1 ? period - x : x;
}

inline double sample_bilinear(const Patch& p, int c, double x, double y) {
  x = reflect_coord(x, p.width());
  y = reflect_coord(y, p.height());
  const int x0 = std::min(static_cast<int>(x), p.width() - 1), y0 = std::min(static_cast<int>(y), p.height() - 1);
  const int x1 = std::min(x0 + 1, p.width() - 1), y1 = std::min(y0 + 1, p.height() - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = (1.0 - fx) * p.at(c, y0, x0) + fx * p.at(c, y0, x1);
  const double bot = (1.0 - fx) * p.at(c, y1, x0) + fx * p.at(c, y1, x1);
  return std::clamp((1.0 - fy) * top + fy * bot, 0.0, 1.0);
}

}  // namespace detail

/// Resamples so that content at input point q appears at
/// c + R(angle) (q - c) + (dx, dy), c being the image centre.
/// Bilinear interpolation with reflection padding; no crop.
inline Patch warp_rigid(const Patch& p, double dx, double dy, double angle_deg) {
  Patch out(p.width(), p.height(), p.colorspace());
  const double cx = (p.width() - 1) / 2.0, cy = (p.height() - 1) / 2.0;
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x) {
      // inverse map: q = c + R(-angle) (out - c - t)
      const double ux = x - cx - dx, uy = y - cy - dy;
      const double sx = cx + cs * ux + sn * uy;
      const double sy = cy - sn * ux + cs * uy;
      for (int c = 0; c < p.channels(); ++c) out.at(c, y, x) = detail::sample_bilinear(p, c, sx, sy);
    }
  return out;
}

/// Shift direction (radians) drawn uniformly on the circle from `seed`.
inline double shift_direction(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x5A1F}));
  return 2.0 * std::numbers::pi * rng.uniform();
}

/// Shift by shift_frac of the image size along a seeded random direction and
/// rotate by angle_deg about the centre (scale 1), then crop_valid.
inline Patch shift_scale_rotate(const Patch& p, double shift_frac, double angle_deg, std::uint64_t seed) {
  if (std::abs(shift_frac) > 0.1) throw Error(errc::kInvalidArgument, "shift fraction must satisfy |shift| <= 0.1");
  if (std::abs(angle_deg) > 45.0) throw Error(errc::kInvalidArgument, "rotation must satisfy |angle| <= 45 degrees");
  const double phi = shift_direction(seed);
  const double dx = shift_frac * p.width() * std::cos(phi);
  const double dy = shift_frac * p.height() * std::sin(phi);
  return crop_valid(warp_rigid(p, dx, dy, angle_deg));
}

inline constexpr int kElasticGrid = 5;

struct DisplacementField {
  int width = 0, height = 0;
  std::vector<double> dx, dy;
};

/// Dense displacement from a grid x grid lattice of control points spanning
/// the image. Control displacements are uniform in [-magnitude, magnitude]
/// per axis; the dense field is their bilinear interpolation.
inline DisplacementField elastic_displacement_field(int width, int height, double magnitude, std::uint64_t seed,
                                                    int grid = kElasticGrid) {
  if (magnitude < 0.0) throw Error(errc::kInvalidArgument, "elastic magnitude must be nonnegative");
  if (grid < 2) throw Error(errc::kInvalidArgument, "elastic grid needs at least 2x2 control points");
  Rng rng(derive_seed(seed, {0xE1A5}));
  std::vector<double> cdx(static_cast<std::size_t>(grid) * grid), cdy(cdx.size());
  for (std::size_t i = 0; i < cdx.size(); ++i) {
    cdx[i] = magnitude * rng.uniform(-1.0, 1.0);
    cdy[i] = magnitude * rng.uniform(-1.0, 1.0);
  }
  DisplacementField f{width, height, std::vector<double>(static_cast<std::size_t>(width) * height),
                      std::vector<double>(static_cast<std::size_t>(width) * height)};
  const double sx = (grid - 1) / std::max(1.0, width - 1.0), sy = (grid - 1) / std::max(1.0, height - 1.0);
  for (int y = 0; y < height; ++y) {
    const double gy = y * sy;
    const int j0 = std::min(static_cast<int>(gy), grid - 2);
    const double fy = gy - j0;
    for (int x = 0; x < width; ++x) {
      const double gx = x * sx;
      const int i0 = std::min(static_cast<int>(gx), grid - 2);
      const double fx = gx - i0;
      auto lerp2 = [&](const std::vector<double>& v) {
        const double a = v[static_cast<std::size_t>(j0) * grid + i0], b = v[static_cast<std::size_t>(j0) * grid + i0 + 1];
        const double c = v[static_cast<std::size_t>(j0 + 1) * grid + i0],
                     d = v[static_cast<std::size_t>(j0 + 1) * grid + i0 + 1];
        return (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d);
      };
      const std::size_t k = static_cast<std::size_t>(y) * width + x;
      f.dx[k] = lerp2(cdx);
      f.dy[k] = lerp2(cdy);
    }
  }
  return f;
}

/// Non-rigid grid deformation followed by crop_valid.
inline Patch grid_elastic_deform(const Patch& p, double magnitude, std::uint64_t seed, int grid = kElasticGrid) {
  const auto field = elastic_displacement_field(p.width(), p.height(), magnitude, seed, grid);
  Patch out(p.width(), p.height(), p.colorspace());
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * p.width() + x;
      for (int c = 0; c < p.channels(); ++c)
        out.at(c, y, x) = detail::sample_bilinear(p, c, x + field.dx[k], y + field.dy[k]);
    }
  return crop_valid(out);
}

/// Applies level `delta` of `kind` with the per-patch stream `seed`.
inline Patch apply_distortion(const Patch& p, DistortionKind kind, double delta, std::uint64_t seed) {
  switch (kind) {
    case DistortionKind::Shift: return shift_scale_rotate(p, delta, 0.0, seed);
    case DistortionKind::Rotate: return shift_scale_rotate(p, 0.0, delta, seed);
    case DistortionKind::Elastic: return grid_elastic_deform(p, delta, seed);
  }
  return p;
}

using PairMetric = std::function<double(const Patch&, const Patch&)>;
/// Builds one metric instance per worker thread.
using PairMetricFactory = std::function<PairMetric()>;

struct SensitivityCurve {
  std::string metric_name;
  DistortionKind kind = DistortionKind::Shift;
  std::vector<double> deltas;
  std::vector<double> medians;
  std::vector<double> iqrs;
  std::vector<std::size_t> counts;
  /// Median over patches of metric(I_0, I_0) on the uncropped patch.
  double v0 = 0.0;
};

/// For every patch and level: score = metric(crop(I_0), distort(I_0, delta_k)).
/// Per level the median and interquartile range (type-7 quantiles) are kept.
inline std::vector<SensitivityCurve> run_stress(const std::vector<Patch>& patches, const PairMetricFactory& make_metric,
                                                const std::string& metric_name,
                                                const std::vector<DistortionGrid>& grids, std::uint64_t seed,
                                                unsigned threads = 1) {
  if (patches.empty()) throw Error(errc::kInvalidArgument, "run_stress needs at least one patch");
  std::vector<double> v0s(patches.size());
  parallel_for_with_state(patches.size(), threads, make_metric,
                          [&](PairMetric& metric, std::size_t i) { v0s[i] = metric(patches[i], patches[i]); });
  const double v0 = median(v0s);

  std::vector<SensitivityCurve> curves;
  for (const auto& grid : grids) {
    validate(grid);
    const std::size_t nl = grid.levels.size();
    std::vector<double> scores(patches.size() * nl);
    parallel_for_with_state(patches.size(), threads, make_metric, [&](PairMetric& metric, std::size_t i) {
      const std::uint64_t s = derive_seed(seed, {i, static_cast<std::uint64_t>(grid.kind)});
      const Patch base = crop_valid(patches[i]);
      for (std::size_t k = 0; k < nl; ++k)
        scores[i * nl + k] = metric(base, apply_distortion(patches[i], grid.kind, grid.levels[k], s));
    });
    SensitivityCurve c;
    c.metric_name = metric_name;
    c.kind = grid.kind;
    c.deltas = grid.levels;
    c.v0 = v0;
    for (std::size_t k = 0; k < nl; ++k) {
      std::vector<double> level;
      for (std::size_t i = 0; i < patches.size(); ++i)
        if (std::isfinite(scores[i * nl + k])) level.push_back(scores[i * nl + k]);
      if (level.empty()) throw Error(errc::kInvalidArgument, "no finite scores at level " + std::to_string(k));
      c.medians.push_back(median(level));
      c.iqrs.push_back(quantile_type7(level, 0.75) - quantile_type7(level, 0.25));
      c.counts.push_back(level.size());
    }
    curves.push_back(std::move(c));
  }
  return curves;
}

/// Convenience overload for a reentrant metric shared by all workers.
inline std::vector<SensitivityCurve> run_stress(const std::vector<Patch>& patches, const PairMetric& metric,
                                                const std::string& metric_name,
                                                const std::vector<DistortionGrid>& grids, std::uint64_t seed,
                                                unsigned threads = 1) {
  return run_stress(patches, PairMetricFactory([&] { return metric; }), metric_name, grids, seed, threads);
}

/// ES_k = |M_k - M_0| / |M_max - M_0|.
inline double early_saturation(const SensitivityCurve& curve, std::size_t k) {
  const auto& m = curve.medians;
  if (m.size() < 2 || k >= m.size()) throw Error(errc::kInvalidArgument, "early_saturation: level out of range");
  const double range = std::abs(m.back() - m.front());
  if (!(range > 0.0)) throw Error(errc::kDegenerateCurve, "curve has zero dynamic range");
  return std::abs(m[k] - m.front()) / range;
}

/// LSR_m = Slope_last^(m) * delta_max / |M_max - M_0| with
/// Slope_last^(m) = |M_max - M_{max-m}| / (delta_max - delta_{max-m}).
inline double late_sensitivity_ratio(const SensitivityCurve& curve, std::size_t m) {
  const auto& M = curve.medians;
  const auto& d = curve.deltas;
  if (M.size() != d.size() || m < 1 || m >= M.size())
    throw Error(errc::kInvalidArgument, "late_sensitivity_ratio: m out of range");
  const std::size_t last = M.size() - 1;
  const double span = d[last] - d[last - m];
  const double range = std::abs(M[last] - M.front());
  if (!(span > 0.0) || !(range > 0.0)) throw Error(errc::kDegenerateCurve, "curve has a degenerate denominator");
  const double slope = std::abs(M[last] - M[last - m]) / span;
  return slope * d[last] / range;
}

struct SensitivityIndices {
  double es1 = std::nan(""), es2 = std::nan(""), lsr1 = std::nan(""), lsr2 = std::nan("");
  bool degenerate = false;
};

inline SensitivityIndices sensitivity_indices(const SensitivityCurve& c) {
  SensitivityIndices r;
  try {
    r.es1 = early_saturation(c, 1);
    r.es2 = early_saturation(c, 2);
    r.lsr1 = late_sensitivity_ratio(c, 1);
    r.lsr2 = late_sensitivity_ratio(c, 2);
  } catch (const Error& e) {
    if (e.kind() != errc::kDegenerateCurve) throw;
    r = {};
    r.degenerate = true;
  }
  return r;
}

inline std::string curves_csv(const std::vector<SensitivityCurve>& curves) {
  std::string out = "metric,kind,delta,median,iqr,n\n";
  for (const auto& c : curves)
    for (std::size_t k = 0; k < c.deltas.size(); ++k)
      out += c.metric_name + "," + to_string(c.kind) + "," + format_double(c.deltas[k]) + "," +
             format_double(c.medians[k]) + "," + format_double(c.iqrs[k]) + "," + std::to_string(c.counts[k]) + "\n";
  return out;
}

inline std::string indices_csv(const std::vector<SensitivityCurve>& curves) {
  std::string out = "metric,kind,ES1,ES2,LSR1,LSR2\n";
  for (const auto& c : curves) {
    const auto ix = sensitivity_indices(c);
    out += c.metric_name + "," + to_string(c.kind) + "," + format_double(ix.es1) + "," + format_double(ix.es2) + "," +
           format_double(ix.lsr1) + "," + format_double(ix.lsr2) + "\n";
  }
  return out;
}

}  // namespace histosim
