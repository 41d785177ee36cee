#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "histosim/core_data.hpp"

namespace histosim {

enum class Orientation { HigherIsBetter, LowerIsBetter };

inline constexpr double kPsnrCapDb = 100.0;

/// Peak signal-to-noise ratio with dynamic range 1, over all channels.
/// Capped at 100 dB so identical inputs stay finite.
inline double psnr(const Patch& a, const Patch& b) {
  require_same_shape(a, b, "psnr");
  auto va = a.values(), vb = b.values();
  double sse = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(va.size());
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

/// Zero-mean normalized cross-correlation of the flattened patches.
/// Returns 0 when either side has zero variance.
inline double ncc(const Patch& a, const Patch& b) {
  require_same_shape(a, b, "ncc");
  auto va = a.values(), vb = b.values();
  const double n = static_cast<double>(va.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    ma += va[i];
    mb += vb[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double da = va[i] - ma, db = vb[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline constexpr int kMiBins = 64;

namespace detail {
inline int mi_bin(double v) { return std::clamp(static_cast<int>(v * kMiBins), 0, kMiBins - 1); }
}  // namespace detail

/// Shannon entropy (bits) of the 64-bin marginal histogram over [0, 1].
inline double histogram_entropy(const Patch& a) {
  std::array<double, kMiBins> h{};
  for (double v : a.values()) h[detail::mi_bin(v)] += 1.0;
  const double n = static_cast<double>(a.values().size());
  double e = 0.0;
  for (double c : h)
    if (c > 0) e -= (c / n) * std::log2(c / n);
  return e;
}

/// Mutual information (bits) from a 64x64 joint histogram over [0,1]^2.
inline double mutual_information(const Patch& a, const Patch& b) {
  require_same_shape(a, b, "mutual_information");
  std::vector<double> joint(kMiBins * kMiBins, 0.0);
  std::array<double, kMiBins> pa{}, pb{};
  auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const int ia = detail::mi_bin(va[i]), ib = detail::mi_bin(vb[i]);
    joint[ia * kMiBins + ib] += 1.0;
    pa[ia] += 1.0;
    pb[ib] += 1.0;
  }
  const double n = static_cast<double>(va.size());
  double mi = 0.0;
  for (int i = 0; i < kMiBins; ++i)
    for (int j = 0; j < kMiBins; ++j) {
      const double c = joint[i * kMiBins + j];
      if (c > 0) mi += (c / n) * std::log2(c * n / (pa[i] * pb[j]));
    }
  return std::max(mi, 0.0);
}

// ---------------------------------------------------------------------------
// SSIM family

inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Normalized 1-D Gaussian of odd length `size` with sigma = 1.5 * size / 11.
inline std::vector<double> ssim_gaussian(int size) {
  const double sigma = 1.5 * size / 11.0;
  std::vector<double> g(static_cast<std::size_t>(size));
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - (size - 1) / 2.0;
    g[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

namespace detail {

/// Separable 'valid' filtering of a w x h plane.
inline std::vector<double> filter_valid(std::span<const double> src, int w, int h, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int ow = w - k + 1, oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

struct SsimStats {
  double ssim;  // mean of the full SSIM map
  double cs;    // mean of the contrast-structure map
};

inline SsimStats ssim_plane(std::span<const double> a, std::span<const double> b, int w, int h,
                            const std::vector<double>& g) {
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  auto mu1 = filter_valid(a, w, h, g), mu2 = filter_valid(b, w, h, g);
  auto e11 = filter_valid(aa, w, h, g), e22 = filter_valid(bb, w, h, g), e12 = filter_valid(ab, w, h, g);
  double sum_ssim = 0.0, sum_cs = 0.0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double m1 = mu1[i], m2 = mu2[i];
    const double s11 = e11[i] - m1 * m1, s22 = e22[i] - m2 * m2, s12 = e12[i] - m1 * m2;
    const double cs = (2.0 * s12 + c2) / (s11 + s22 + c2);
    const double lum = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
    sum_ssim += lum * cs;
    sum_cs += cs;
  }
  const double n = static_cast<double>(mu1.size());
  return {sum_ssim / n, sum_cs / n};
}

}  // namespace detail

/// Mean SSIM with a Gaussian window of odd size `window` (7 and 31 are the
/// benchmarked sizes). Multi-channel inputs average the per-channel values.
inline double ssim(const Patch& a, const Patch& b, int window) {
  require_same_shape(a, b, "ssim");
  if (window < 1 || window % 2 == 0) throw Error(errc::kInvalidArgument, "ssim window must be odd");
  if (window > std::min(a.width(), a.height()))
    throw Error(errc::kInvalidArgument, "ssim window " + std::to_string(window) + " exceeds image size");
  const auto g = ssim_gaussian(window);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    total += detail::ssim_plane(a.plane(c), b.plane(c), a.width(), a.height(), g).ssim;
  return total / a.channels();
}

inline constexpr std::array<double, 5> kMsSsimWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr int kMsSsimWindow = 11;

/// 2x2 average pooling; a trailing odd row/column is dropped.
inline std::vector<double> downsample2(std::span<const double> src, int w, int h, int& ow, int& oh) {
  ow = w / 2;
  oh = h / 2;
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const std::size_t i0 = static_cast<std::size_t>(2 * y) * w + 2 * x;
      out[static_cast<std::size_t>(y) * ow + x] = 0.25 * (src[i0] + src[i0 + 1] + src[i0 + w] + src[i0 + w + 1]);
    }
  return out;
}

/// Five-scale MS-SSIM: contrast-structure at the four finer scales and full
/// SSIM at the coarsest, each clamped at zero before exponentiation.
inline double ms_ssim(const Patch& a, const Patch& b) {
  require_same_shape(a, b, "ms_ssim");
  const int levels = static_cast<int>(kMsSsimWeights.size());
  const int min_side = (1 << (levels - 1)) * kMsSsimWindow;
  if (std::min(a.width(), a.height()) < min_side)
    throw Error(errc::kInvalidArgument, "ms_ssim needs images of at least " + std::to_string(min_side) + " pixels per side");
  const auto g = ssim_gaussian(kMsSsimWindow);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    std::vector<double> pa(a.plane(c).begin(), a.plane(c).end()), pb(b.plane(c).begin(), b.plane(c).end());
    int w = a.width(), h = a.height();
    double value = 1.0;
    for (int s = 0; s < levels; ++s) {
      const auto st = detail::ssim_plane(pa, pb, w, h, g);
      const double term = s + 1 < levels ? st.cs : st.ssim;
      value *= std::pow(std::max(term, 0.0), kMsSsimWeights[s]);
      if (s + 1 < levels) {
        int nw = 0, nh = 0;
        pa = downsample2(pa, w, h, nw, nh);
        pb = downsample2(pb, w, h, nw, nh);
        w = nw;
        h = nh;
      }
    }
    total += value;
  }
  return total / a.channels();
}

}  // namespace histosim
