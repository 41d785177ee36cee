#pragma once

// FSIM / FSIMc: phase congruency (log-Gabor bank, 4 scales x 4 orientations)
// combined with Scharr gradient magnitude, pooled with max-PC weighting.
// Images are processed on a 0-255 scale so the stabilizing constants keep
// their customary meaning.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <opencv2/core.hpp>

#include "histosim/core_data.hpp"

namespace histosim {

struct FsimConstants {
  double t1 = 0.85;
  double t2 = 160.0;
  double t3 = 200.0;
  double t4 = 200.0;
  double lambda = 0.03;
};

namespace fsim_detail {

struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;
  double& operator()(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  double operator()(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

// Frequency coordinate of array index i after ifftshift, matching the
// [-n/2, n/2) / n (even) or [-(n-1)/2, (n-1)/2] / (n-1) (odd) ramps.
inline double freq_coord(int i, int n) {
  const int k = (i + n / 2) % n;
  if (n % 2 == 1) return (k - (n - 1) / 2.0) / (n - 1 > 0 ? n - 1 : 1);
  return (k - n / 2.0) / n;
}

/// Phase congruency map (Kovesi's phasecong2 as used by FSIM).
inline Plane phase_congruency(const Plane& im) {
  constexpr int kScales = 4, kOrients = 4;
  constexpr double kMinWaveLength = 6.0, kMult = 2.0, kSigmaOnf = 0.55, kDThetaOnSigma = 1.2, kK = 2.0,
                   kEpsilon = 1e-4;
  const double theta_sigma = std::numbers::pi / kOrients / kDThetaOnSigma;
  const int rows = im.h, cols = im.w;
  const std::size_t n = static_cast<std::size_t>(rows) * cols;

  cv::Mat src(rows, cols, CV_64F, const_cast<double*>(im.v.data()));
  cv::Mat image_fft;
  cv::dft(src, image_fft, cv::DFT_COMPLEX_OUTPUT);

  std::vector<double> radius(n), sintheta(n), costheta(n), lowpass(n);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      const double fx = freq_coord(x, cols), fy = freq_coord(y, rows);
      const std::size_t i = static_cast<std::size_t>(y) * cols + x;
      radius[i] = std::sqrt(fx * fx + fy * fy);
      const double th = std::atan2(-fy, fx);
      sintheta[i] = std::sin(th);
      costheta[i] = std::cos(th);
      lowpass[i] = 1.0 / (1.0 + std::pow(radius[i] / 0.45, 2 * 15));
    }
  radius[0] = 1.0;

  std::vector<std::vector<double>> log_gabor(kScales, std::vector<double>(n));
  for (int s = 0; s < kScales; ++s) {
    const double fo = 1.0 / (kMinWaveLength * std::pow(kMult, s));
    const double denom = 2.0 * std::pow(std::log(kSigmaOnf), 2);
    for (std::size_t i = 0; i < n; ++i) {
      const double l = std::log(radius[i] / fo);
      log_gabor[s][i] = std::exp(-(l * l) / denom) * lowpass[i];
    }
    log_gabor[s][0] = 0.0;
  }

  std::vector<double> energy_all(n, 0.0), an_all(n, 0.0);
  std::vector<double> filter(n);
  cv::Mat filtered(rows, cols, CV_64FC2), eo, filt_mat(rows, cols, CV_64F), filt_spatial;

  for (int o = 0; o < kOrients; ++o) {
    const double angl = o * std::numbers::pi / kOrients;
    std::vector<double> spread(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double ds = sintheta[i] * std::cos(angl) - costheta[i] * std::sin(angl);
      const double dc = costheta[i] * std::cos(angl) + sintheta[i] * std::sin(angl);
      const double dtheta = std::abs(std::atan2(ds, dc));
      spread[i] = std::exp(-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma));
    }
    std::vector<std::vector<std::complex<double>>> eo_s(kScales, std::vector<std::complex<double>>(n));
    std::vector<std::vector<double>> ifft_filters(kScales, std::vector<double>(n));
    std::vector<double> sum_e(n, 0.0), sum_o(n, 0.0), sum_an(n, 0.0);
    double em_n = 0.0;

    for (int s = 0; s < kScales; ++s) {
      for (std::size_t i = 0; i < n; ++i) filter[i] = log_gabor[s][i] * spread[i];
      for (int y = 0; y < rows; ++y) {
        const auto* f = image_fft.ptr<cv::Vec2d>(y);
        auto* d = filtered.ptr<cv::Vec2d>(y);
        double* fm = filt_mat.ptr<double>(y);
        for (int x = 0; x < cols; ++x) {
          const double g = filter[static_cast<std::size_t>(y) * cols + x];
          d[x] = cv::Vec2d(f[x][0] * g, f[x][1] * g);
          fm[x] = g;
        }
      }
      cv::idft(filtered, eo, cv::DFT_COMPLEX_OUTPUT | cv::DFT_SCALE);
      cv::idft(filt_mat, filt_spatial, cv::DFT_REAL_OUTPUT | cv::DFT_SCALE);
      const double sq = std::sqrt(static_cast<double>(n));
      for (int y = 0; y < rows; ++y) {
        const auto* e = eo.ptr<cv::Vec2d>(y);
        const auto* fs = filt_spatial.ptr<double>(y);
        for (int x = 0; x < cols; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * cols + x;
          eo_s[s][i] = {e[x][0], e[x][1]};
          ifft_filters[s][i] = fs[x] * sq;
          sum_an[i] += std::abs(eo_s[s][i]);
          sum_e[i] += e[x][0];
          sum_o[i] += e[x][1];
        }
      }
      if (s == 0)
        for (double g : filter) em_n += g * g;
    }

    std::vector<double> energy(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double xe = std::sqrt(sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]) + kEpsilon;
      const double mean_e = sum_e[i] / xe, mean_o = sum_o[i] / xe;
      for (int s = 0; s < kScales; ++s) {
        const double e = eo_s[s][i].real(), od = eo_s[s][i].imag();
        energy[i] += e * mean_e + od * mean_o - std::abs(e * mean_o - od * mean_e);
      }
    }

    std::vector<double> e2(n);
    for (std::size_t i = 0; i < n; ++i) e2[i] = std::norm(eo_s[0][i]);
    auto mid = e2.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(e2.begin(), mid, e2.end());
    double median_e2n = *mid;
    if (n % 2 == 0) median_e2n = 0.5 * (median_e2n + *std::max_element(e2.begin(), mid));
    const double mean_e2n = -median_e2n / std::log(0.5);
    const double noise_power = em_n > 0.0 ? mean_e2n / em_n : 0.0;

    double sum_an2 = 0.0, sum_aiaj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (int s = 0; s < kScales; ++s) sum_an2 += ifft_filters[s][i] * ifft_filters[s][i];
      for (int si = 0; si < kScales - 1; ++si)
        for (int sj = si + 1; sj < kScales; ++sj) sum_aiaj += ifft_filters[si][i] * ifft_filters[sj][i];
    }
    const double est_noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
    const double tau = std::sqrt(std::max(est_noise_energy2, 0.0) / 2.0);
    const double est_noise_energy = tau * std::sqrt(std::numbers::pi / 2.0);
    const double est_noise_sigma = std::sqrt((2.0 - std::numbers::pi / 2.0) * tau * tau);
    const double t = (est_noise_energy + kK * est_noise_sigma) / 1.7;

    for (std::size_t i = 0; i < n; ++i) {
      energy_all[i] += std::max(energy[i] - t, 0.0);
      an_all[i] += sum_an[i];
    }
  }

  Plane pc{cols, rows, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) pc.v[i] = an_all[i] > 0.0 ? energy_all[i] / an_all[i] : 0.0;
  return pc;
}

/// Scharr gradient magnitude with MATLAB conv2(...,'same') semantics
/// (true convolution, zero padding) and kernels [3 0 -3; 10 0 -10; 3 0 -3]/16.
inline Plane scharr_gradient_magnitude(const Plane& im) {
  static constexpr double dx[3][3] = {{3, 0, -3}, {10, 0, -10}, {3, 0, -3}};
  static constexpr double dy[3][3] = {{3, 10, 3}, {0, 0, 0}, {-3, -10, -3}};
  Plane out{im.w, im.h, std::vector<double>(im.v.size())};
  for (int y = 0; y < im.h; ++y)
    for (int x = 0; x < im.w; ++x) {
      double gx = 0.0, gy = 0.0;
      for (int m = 0; m < 3; ++m)
        for (int k = 0; k < 3; ++k) {
          // conv: out(y,x) = sum K(m,k) * in(y - (m-1), x - (k-1))
          const int yy = y - (m - 1), xx = x - (k - 1);
          if (yy < 0 || yy >= im.h || xx < 0 || xx >= im.w) continue;
          gx += dx[m][k] / 16.0 * im(yy, xx);
          gy += dy[m][k] / 16.0 * im(yy, xx);
        }
      out(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  return out;
}

/// Box-average then decimate by F = max(1, round(min(h, w) / 256)).
inline Plane fsim_downsample(const Plane& im) {
  const int f = std::max(1, static_cast<int>(std::lround(std::min(im.w, im.h) / 256.0)));
  if (f == 1) return im;
  // 'same' box filter with zero padding, anchored like MATLAB's fspecial('average') + imfilter.
  const int before = (f - 1) / 2;
  Plane out{(im.w + f - 1) / f, (im.h + f - 1) / f, {}};
  out.v.assign(static_cast<std::size_t>(out.w) * out.h, 0.0);
  for (int oy = 0; oy < out.h; ++oy)
    for (int ox = 0; ox < out.w; ++ox) {
      const int cy = oy * f, cx = ox * f;
      double s = 0.0;
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx) {
          const int yy = cy + dy - before, xx = cx + dx - before;
          if (yy >= 0 && yy < im.h && xx >= 0 && xx < im.w) s += im(yy, xx);
        }
      out(oy, ox) = s / (f * f);
    }
  return out;
}

struct FsimPlanes {
  Plane y, i, q;
};

inline FsimPlanes to_yiq255(const Patch& p, bool need_chroma) {
  FsimPlanes out;
  const int w = p.width(), h = p.height();
  out.y = {w, h, std::vector<double>(p.plane_size())};
  if (p.channels() == 1) {
    auto src = p.plane(0);
    for (std::size_t k = 0; k < src.size(); ++k) out.y.v[k] = 255.0 * src[k];
    return out;
  }
  auto r = p.plane(0), g = p.plane(1), b = p.plane(2);
  if (need_chroma) {
    out.i = {w, h, std::vector<double>(p.plane_size())};
    out.q = {w, h, std::vector<double>(p.plane_size())};
  }
  for (std::size_t k = 0; k < r.size(); ++k) {
    const double R = 255.0 * r[k], G = 255.0 * g[k], B = 255.0 * b[k];
    out.y.v[k] = 0.299 * R + 0.587 * G + 0.114 * B;
    if (need_chroma) {
      out.i.v[k] = 0.596 * R - 0.274 * G - 0.322 * B;
      out.q.v[k] = 0.211 * R - 0.523 * G + 0.312 * B;
    }
  }
  return out;
}

inline double fsim_impl(const Patch& a, const Patch& b, bool chroma, const FsimConstants& k) {
  require_same_shape(a, b, chroma ? "fsimc" : "fsim");
  if (chroma && a.channels() != 3) throw Error(errc::kInvalidArgument, "fsimc requires RGB inputs");
  auto pa = to_yiq255(a, chroma), pb = to_yiq255(b, chroma);
  const Plane y1 = fsim_downsample(pa.y), y2 = fsim_downsample(pb.y);
  const Plane pc1 = phase_congruency(y1), pc2 = phase_congruency(y2);
  const Plane g1 = scharr_gradient_magnitude(y1), g2 = scharr_gradient_magnitude(y2);
  Plane i1, i2, q1, q2;
  if (chroma) {
    i1 = fsim_downsample(pa.i);
    i2 = fsim_downsample(pb.i);
    q1 = fsim_downsample(pa.q);
    q2 = fsim_downsample(pb.q);
  }
  double num = 0.0, den = 0.0, unweighted = 0.0;
  for (std::size_t i = 0; i < y1.v.size(); ++i) {
    const double p1 = pc1.v[i], p2 = pc2.v[i];
    const double pc_sim = (2.0 * p1 * p2 + k.t1) / (p1 * p1 + p2 * p2 + k.t1);
    const double gm_sim = (2.0 * g1.v[i] * g2.v[i] + k.t2) / (g1.v[i] * g1.v[i] + g2.v[i] * g2.v[i] + k.t2);
    double sim = pc_sim * gm_sim;
    if (chroma) {
      const double is = (2.0 * i1.v[i] * i2.v[i] + k.t3) / (i1.v[i] * i1.v[i] + i2.v[i] * i2.v[i] + k.t3);
      const double qs = (2.0 * q1.v[i] * q2.v[i] + k.t4) / (q1.v[i] * q1.v[i] + q2.v[i] * q2.v[i] + k.t4);
      const double prod = is * qs;
      // real part of the principal power for negative bases
      sim *= prod >= 0.0 ? std::pow(prod, k.lambda) : std::pow(-prod, k.lambda) * std::cos(k.lambda * std::numbers::pi);
    }
    const double pcm = std::max(p1, p2);
    num += sim * pcm;
    den += pcm;
    unweighted += sim;
  }
  // Featureless pair: fall back to unweighted pooling.
  if (den <= 1e-12) return unweighted / static_cast<double>(y1.v.size());
  return num / den;
}

}  // namespace fsim_detail

inline double fsim(const Patch& a, const Patch& b, const FsimConstants& k = {}) {
  return fsim_detail::fsim_impl(a, b, false, k);
}

inline double fsimc(const Patch& a, const Patch& b, const FsimConstants& k = {}) {
  return fsim_detail::fsim_impl(a, b, true, k);
}

}  // namespace histosim
