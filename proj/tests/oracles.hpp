#pragma once

// Slow, direct reference implementations shared by the unit tests and the
// acceptance runner. Written independently of the library code paths.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "histosim/histosim.hpp"

namespace oracles {

using histosim::Patch;

/// Unvectorized SSIM statistics with an explicit 2-D Gaussian window.
struct OracleStats {
  double ssim, cs;
};

inline OracleStats oracle_ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int w, int h, int k) {
  const double sigma = 1.5 * k / 11.0;
  std::vector<double> g1(k);
  double s = 0.0;
  for (int i = 0; i < k; ++i) {
    const double x = i - (k - 1) / 2.0;
    g1[i] = std::exp(-x * x / (2 * sigma * sigma));
    s += g1[i];
  }
  for (double& v : g1) v /= s;
  const double c1 = 1e-4, c2 = 9e-4;
  double tot_s = 0.0, tot_cs = 0.0;
  int n = 0;
  for (int y = 0; y + k <= h; ++y)
    for (int x = 0; x + k <= w; ++x) {
      double m1 = 0, m2 = 0, e11 = 0, e22 = 0, e12 = 0;
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          const double wt = g1[dy] * g1[dx];
          const double va = a[(y + dy) * w + x + dx], vb = b[(y + dy) * w + x + dx];
          m1 += wt * va;
          m2 += wt * vb;
          e11 += wt * va * va;
          e22 += wt * vb * vb;
          e12 += wt * va * vb;
        }
      const double cs = (2 * (e12 - m1 * m2) + c2) / ((e11 - m1 * m1) + (e22 - m2 * m2) + c2);
      tot_cs += cs;
      tot_s += cs * (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
      ++n;
    }
  return {tot_s / n, tot_cs / n};
}

inline double oracle_ms_ssim_gray(const Patch& pa, const Patch& pb) {
  const double wts[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  std::vector<double> a(pa.values().begin(), pa.values().end()), b(pb.values().begin(), pb.values().end());
  int w = pa.width(), h = pa.height();
  double out = 1.0;
  for (int s = 0; s < 5; ++s) {
    const auto st = oracle_ssim_plane(a, b, w, h, 11);
    out *= std::pow(std::max(0.0, s < 4 ? st.cs : st.ssim), wts[s]);
    if (s == 4) break;
    const int nw = w / 2, nh = h / 2;
    std::vector<double> na(nw * nh), nb(nw * nh);
    for (int y = 0; y < nh; ++y)
      for (int x = 0; x < nw; ++x) {
        na[y * nw + x] = (a[2 * y * w + 2 * x] + a[2 * y * w + 2 * x + 1] + a[(2 * y + 1) * w + 2 * x] +
                          a[(2 * y + 1) * w + 2 * x + 1]) / 4.0;
        nb[y * nw + x] = (b[2 * y * w + 2 * x] + b[2 * y * w + 2 * x + 1] + b[(2 * y + 1) * w + 2 * x] +
                          b[(2 * y + 1) * w + 2 * x + 1]) / 4.0;
      }
    a = std::move(na);
    b = std::move(nb);
    w = nw;
    h = nh;
  }
  return out;
}

/// Rank with ties averaged, via an O(n^2) count.
inline std::vector<double> oracle_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, eq = 0;
    for (double w : v) less += w < v[i], eq += w == v[i];
    r[i] = less + (eq + 1) / 2.0;
  }
  return r;
}

inline double oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / den;
}

/// Trapezoid area under the empirical ROC traced by descending thresholds.
inline double trapezoid_auc(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] > s[b]; });
  double P = 0, N = 0;
  for (int v : y) (v ? P : N) += 1;
  double tp = 0, fp = 0, area = 0, prev_tpr = 0, prev_fpr = 0;
  for (auto i : idx) {
    (y[i] ? tp : fp) += 1;
    const double tpr = tp / P, fpr = fp / N;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2;
    prev_tpr = tpr;
    prev_fpr = fpr;
  }
  return area;
}

/// 3x3 median with reflect-101 borders, one pixel at a time.
inline Patch naive_median3(const Patch& p) {
  auto refl = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  Patch out(p.width(), p.height(), p.colorspace());
  for (int c = 0; c < p.channels(); ++c)
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < p.width(); ++x) {
        std::vector<double> w;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) w.push_back(p.at(c, refl(y + dy, p.height()), refl(x + dx, p.width())));
        std::sort(w.begin(), w.end());
        out.at(c, y, x) = w[4];
      }
  return out;
}

}  // namespace oracles
