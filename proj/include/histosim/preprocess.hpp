#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "histosim/core_data.hpp"

namespace histosim {

enum class ChannelMode { RGB, GRAY, HED };

inline const char* to_string(ChannelMode m) {
  switch (m) {
    case ChannelMode::RGB: return "rgb";
    case ChannelMode::GRAY: return "gray";
    case ChannelMode::HED: return "hed";
  }
  return "?";
}

/// The six-slot preprocessing switchboard. Its code string is
/// "normalize|mode|invert|hist_match|clahe|smooth", e.g. "0|gray|0|1|1|0".
struct PreprocessConfig {
  bool normalize = false;
  ChannelMode channel_mode = ChannelMode::RGB;
  bool invert = false;
  bool hist_match = false;
  bool clahe = false;
  bool smooth = false;

  friend bool operator==(const PreprocessConfig&, const PreprocessConfig&) = default;
};

inline std::string format_config(const PreprocessConfig& c) {
  auto b = [](bool v) { return v ? "1" : "0"; };
  return std::string(b(c.normalize)) + "|" + to_string(c.channel_mode) + "|" + b(c.invert) + "|" + b(c.hist_match) +
         "|" + b(c.clahe) + "|" + b(c.smooth);
}

inline PreprocessConfig parse_config(std::string_view code) {
  std::vector<std::string_view> tok;
  std::size_t start = 0;
  while (true) {
    auto bar = code.find('|', start);
    tok.push_back(code.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  const std::string quoted = "'" + std::string(code) + "'";
  if (tok.size() != 6) throw Error(errc::kParse, "config code " + quoted + " must have six '|'-separated tokens");
  auto flag = [&](std::string_view t, const char* slot) {
    if (t == "0") return false;
    if (t == "1") return true;
    throw Error(errc::kParse, "config code " + quoted + ": " + slot + " must be 0 or 1");
  };
  PreprocessConfig c;
  c.normalize = flag(tok[0], "normalization");
  if (tok[1] == "rgb")
    c.channel_mode = ChannelMode::RGB;
  else if (tok[1] == "gray")
    c.channel_mode = ChannelMode::GRAY;
  else if (tok[1] == "hed")
    c.channel_mode = ChannelMode::HED;
  else
    throw Error(errc::kParse, "config code " + quoted + ": channel mode must be rgb, gray or hed");
  c.invert = flag(tok[2], "intensity inversion");
  c.hist_match = flag(tok[3], "histogram matching");
  c.clahe = flag(tok[4], "CLAHE");
  c.smooth = flag(tok[5], "smoothing");
  return c;
}

/// All 2*3*2*2*2*2 = 96 configurations, ordered by code string.
inline std::vector<PreprocessConfig> enumerate_configs() {
  std::vector<PreprocessConfig> out;
  for (int n = 0; n < 2; ++n)
    for (auto m : {ChannelMode::RGB, ChannelMode::GRAY, ChannelMode::HED})
      for (int i = 0; i < 2; ++i)
        for (int h = 0; h < 2; ++h)
          for (int c = 0; c < 2; ++c)
            for (int s = 0; s < 2; ++s) out.push_back({n == 1, m, i == 1, h == 1, c == 1, s == 1});
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return format_config(a) < format_config(b); });
  return out;
}

// ---------------------------------------------------------------------------
// Individual steps

/// Per-channel min-max scaling; constant channels become all zeros.
inline Patch minmax_normalize(const Patch& p) {
  if (p.empty()) throw Error(errc::kInvalidArgument, "minmax_normalize: empty patch");
  Patch out = p;
  for (int c = 0; c < p.channels(); ++c) {
    auto plane = out.plane(c);
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    const double mn = *lo, range = *hi - *lo;
    for (double& v : plane) v = range > 0.0 ? std::clamp((v - mn) / range, 0.0, 1.0) : 0.0;
  }
  return out;
}

inline constexpr std::array<double, 3> kBt709 = {0.2126, 0.7152, 0.0722};

inline Patch to_grayscale(const Patch& p) {
  if (p.colorspace() != ColorSpace::RGB) throw Error(errc::kInvalidArgument, "to_grayscale: input must be RGB");
  Patch out(p.width(), p.height(), ColorSpace::GRAY);
  auto r = p.plane(0), g = p.plane(1), b = p.plane(2);
  auto dst = out.plane(0);
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i] = std::clamp(kBt709[0] * r[i] + kBt709[1] * g[i] + kBt709[2] * b[i], 0.0, 1.0);
  return out;
}

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Ruifrok-Johnston H-E-DAB stain vectors, one per row (optical density space).
inline constexpr Mat3 kRgbFromHed = {{{0.65, 0.70, 0.29}, {0.07, 0.99, 0.11}, {0.27, 0.57, 0.78}}};

constexpr Mat3 invert3(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 r{};
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

inline constexpr Mat3 kHedFromRgb = invert3(kRgbFromHed);

inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace detail

inline constexpr double kOpticalDensityFloor = 1e-6;

/// Hematoxylin concentration from colour deconvolution. Negative
/// concentrations are clipped to zero, then the channel is min-max rescaled.
inline Patch hed_deconvolve(const Patch& p) {
  if (p.colorspace() != ColorSpace::RGB) throw Error(errc::kInvalidArgument, "hed_deconvolve: input must be RGB");
  Patch out(p.width(), p.height(), ColorSpace::HEMATOXYLIN);
  auto dst = out.plane(0);
  const auto& inv = detail::kHedFromRgb;
  std::vector<double> h(dst.size());
  for (std::size_t i = 0; i < dst.size(); ++i) {
    double od[3];
    for (int c = 0; c < 3; ++c) od[c] = -std::log(std::max(p.plane(c)[i], kOpticalDensityFloor));
    h[i] = std::max(0.0, od[0] * inv[0][0] + od[1] * inv[1][0] + od[2] * inv[2][0]);
  }
  const auto [lo, hi] = std::minmax_element(h.begin(), h.end());
  const double mn = *lo, range = *hi - *lo;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = range > 0.0 ? std::clamp((h[i] - mn) / range, 0.0, 1.0) : 0.0;
  return out;
}

inline Patch invert(const Patch& p) {
  Patch out = p;
  for (double& v : out.values()) v = 1.0 - v;
  return out;
}

inline constexpr int kHistBins = 256;

/// Remaps each channel of `src` so its distribution follows `ref`.
/// Source quantiles come from a 256-bin histogram (each bin maps to the
/// mid-quantile of its CDF step); the reference inverse CDF is the
/// linearly interpolated order statistic of the reference values.
inline Patch histogram_match(const Patch& src, const Patch& ref) {
  if (src.channels() != ref.channels())
    throw Error(errc::kShape, "histogram_match: channel count mismatch (" + std::to_string(src.channels()) + " vs " +
                                  std::to_string(ref.channels()) + ")");
  Patch out = src;
  for (int c = 0; c < src.channels(); ++c) {
    auto s = src.plane(c);
    std::vector<double> sorted_ref(ref.plane(c).begin(), ref.plane(c).end());
    std::sort(sorted_ref.begin(), sorted_ref.end());
    const double nref = static_cast<double>(sorted_ref.size());

    std::array<double, kHistBins> hist{};
    for (double v : s) hist[std::min(kHistBins - 1, static_cast<int>(v * kHistBins))] += 1.0;
    std::array<double, kHistBins> mapped{};
    double cum = 0.0;
    const double n = static_cast<double>(s.size());
    for (int b = 0; b < kHistBins; ++b) {
      const double q = (cum + 0.5 * hist[b]) / n;
      cum += hist[b];
      const double pos = q * (nref - 1.0);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(lo + 1, sorted_ref.size() - 1);
      mapped[b] = sorted_ref[lo] + (pos - static_cast<double>(lo)) * (sorted_ref[hi] - sorted_ref[lo]);
    }
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < s.size(); ++i)
      dst[i] = std::clamp(mapped[std::min(kHistBins - 1, static_cast<int>(s[i] * kHistBins))], 0.0, 1.0);
  }
  return out;
}

struct ClaheParams {
  int tiles_x = 8;
  int tiles_y = 8;
  /// Relative to a uniform 256-bin histogram (OpenCV's convention).
  double clip_limit = 2.0;
};

namespace detail {

inline std::vector<double> clahe_plane(std::span<const double> src, int w, int h, const ClaheParams& prm) {
  const int tx = std::clamp(prm.tiles_x, 1, w);
  const int ty = std::clamp(prm.tiles_y, 1, h);
  constexpr int kLevels = 256;
  std::vector<std::array<double, kLevels>> luts(static_cast<std::size_t>(tx) * ty);
  std::vector<char> flat(luts.size(), 0);

  for (int j = 0; j < ty; ++j) {
    const int y0 = j * h / ty, y1 = (j + 1) * h / ty;
    for (int i = 0; i < tx; ++i) {
      const int x0 = i * w / tx, x1 = (i + 1) * w / tx;
      auto& lut = luts[static_cast<std::size_t>(j) * tx + i];
      const int area = (y1 - y0) * (x1 - x0);
      std::array<int, kLevels> hist{};
      double mn = 1.0, mx = 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          const double v = src[static_cast<std::size_t>(y) * w + x];
          mn = std::min(mn, v);
          mx = std::max(mx, v);
          ++hist[std::clamp(static_cast<int>(std::lround(v * (kLevels - 1))), 0, kLevels - 1)];
        }
      if (mx <= mn) {  // flat tile: exact identity, nothing to equalize
        flat[static_cast<std::size_t>(j) * tx + i] = 1;
        continue;
      }
      const int clip = std::max(1, static_cast<int>(prm.clip_limit * area / kLevels));
      int excess = 0;
      for (int& b : hist)
        if (b > clip) {
          excess += b - clip;
          b = clip;
        }
      const int batch = excess / kLevels;
      int residual = excess - batch * kLevels;
      for (int& b : hist) b += batch;
      if (residual > 0) {
        const int step = std::max(kLevels / residual, 1);
        for (int k = 0; k < kLevels && residual > 0; k += step, --residual) ++hist[k];
      }
      const double scale = static_cast<double>(kLevels - 1) / area;
      int sum = 0;
      for (int k = 0; k < kLevels; ++k) {
        sum += hist[k];
        lut[k] = std::min(sum * scale, static_cast<double>(kLevels - 1));
      }
    }
  }

  // Same level quantization as the histogram; tile centres follow OpenCV's
  // convention (pixel index / tile size - 0.5).
  auto eval = [&](std::size_t t, double v) {
    if (flat[t]) return v;
    return luts[t][std::clamp(static_cast<int>(std::lround(v * (kLevels - 1))), 0, kLevels - 1)] / (kLevels - 1);
  };

  std::vector<double> out(src.size());
  const double tw = static_cast<double>(w) / tx, th = static_cast<double>(h) / ty;
  for (int y = 0; y < h; ++y) {
    const double fy = y / th - 0.5;
    int j0 = static_cast<int>(std::floor(fy));
    double wy = fy - j0;
    int j1 = j0 + 1;
    if (j0 < 0) { j0 = j1 = 0; wy = 0.0; }
    if (j1 > ty - 1) { j1 = ty - 1; j0 = std::min(j0, ty - 1); }
    for (int x = 0; x < w; ++x) {
      const double fx = x / tw - 0.5;
      int i0 = static_cast<int>(std::floor(fx));
      double wx = fx - i0;
      int i1 = i0 + 1;
      if (i0 < 0) { i0 = i1 = 0; wx = 0.0; }
      if (i1 > tx - 1) { i1 = tx - 1; i0 = std::min(i0, tx - 1); }
      const double v = src[static_cast<std::size_t>(y) * w + x];
      const double a = eval(static_cast<std::size_t>(j0) * tx + i0, v);
      const double b = eval(static_cast<std::size_t>(j0) * tx + i1, v);
      const double c = eval(static_cast<std::size_t>(j1) * tx + i0, v);
      const double d = eval(static_cast<std::size_t>(j1) * tx + i1, v);
      const double top = (1.0 - wx) * a + wx * b, bot = (1.0 - wx) * c + wx * d;
      out[static_cast<std::size_t>(y) * w + x] = std::clamp((1.0 - wy) * top + wy * bot, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace detail

/// Contrast-limited adaptive histogram equalization, applied per channel.
/// Tiles with zero dynamic range keep the identity mapping.
inline Patch clahe(const Patch& p, const ClaheParams& params = {}) {
  Patch out = p;
  for (int c = 0; c < p.channels(); ++c) {
    auto eq = detail::clahe_plane(p.plane(c), p.width(), p.height(), params);
    std::copy(eq.begin(), eq.end(), out.plane(c).begin());
  }
  return out;
}

inline constexpr int kMedianKernel = 3;

/// Per-channel k x k median filter with reflect-101 borders.
inline Patch median_smooth(const Patch& p, int k = kMedianKernel) {
  if (k < 1 || k % 2 == 0) throw Error(errc::kInvalidArgument, "median kernel must be odd and positive");
  Patch out = p;
  const int r = k / 2, w = p.width(), h = p.height();
  std::vector<double> window(static_cast<std::size_t>(k) * k);
  const auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
  for (int c = 0; c < p.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::size_t n = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            window[n++] = p.at(c, detail::reflect101(y + dy, h), detail::reflect101(x + dx, w));
        std::nth_element(window.begin(), mid, window.end());
        out.at(c, y, x) = *mid;
      }
    }
  }
  return out;
}

/// Converts an RGB patch to the channel space named by `mode`.
inline Patch convert_channels(const Patch& p, ChannelMode mode) {
  switch (mode) {
    case ChannelMode::RGB:
      if (p.colorspace() != ColorSpace::RGB) throw Error(errc::kInvalidArgument, "rgb mode requires an RGB patch");
      return p;
    case ChannelMode::GRAY: return to_grayscale(p);
    case ChannelMode::HED: return hed_deconvolve(p);
  }
  return p;
}

/// Runs the fixed step order normalize -> channel mode -> invert ->
/// histogram match (IHC toward the H&E reference) -> CLAHE -> smoothing.
inline std::pair<Patch, Patch> apply_pipeline(const Patch& he, const Patch& ihc, const PreprocessConfig& cfg) {
  if (he.colorspace() != ColorSpace::RGB || ihc.colorspace() != ColorSpace::RGB)
    throw Error(errc::kInvalidArgument, "apply_pipeline: both inputs must be RGB");
  Patch a = he, b = ihc;
  if (cfg.normalize) {
    a = minmax_normalize(a);
    b = minmax_normalize(b);
  }
  a = convert_channels(a, cfg.channel_mode);
  b = convert_channels(b, cfg.channel_mode);
  if (cfg.invert) {
    a = invert(a);
    b = invert(b);
  }
  if (cfg.hist_match) b = histogram_match(b, a);
  if (cfg.clahe) {
    a = clahe(a);
    b = clahe(b);
  }
  if (cfg.smooth) {
    a = median_smooth(a);
    b = median_smooth(b);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace histosim
