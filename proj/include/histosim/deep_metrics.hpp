#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <variant>
#include <vector>

#include "histosim/feature_extraction.hpp"

namespace histosim {

struct LayerDistances {
  std::array<double, kNumStages> d{};
  friend bool operator==(const LayerDistances&, const LayerDistances&) = default;
};

inline constexpr double kPearsonEps = 1e-8;

/// Population mean / standard deviation / covariance helpers over one channel.
namespace detail {
struct Moments {
  double mean_a, mean_b, sd_a, sd_b, cov;
};

inline Moments channel_moments(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  return {ma, mb, std::sqrt(saa / n), std::sqrt(sbb / n), sab / n};
}
}  // namespace detail

/// Per stage l: rho_c = cov(f1_c, f2_c) / (sd1 * sd2 + eps) over the spatial
/// positions of channel c, clamped to [-1, 1]; d_l = 1 - mean_c rho_c.
/// A constant channel has zero covariance and therefore contributes rho = 0.
inline LayerDistances channel_pearson_distance(const FeatureStack& f1, const FeatureStack& f2,
                                               double eps = kPearsonEps) {
  require_same_shape(f1, f2, "channel_pearson_distance");
  if (f1.stages.size() != kNumStages) throw Error(errc::kShape, "channel_pearson_distance: expected 4 stages");
  if (!(eps > 0.0)) throw Error(errc::kInvalidArgument, "eps must be positive");
  LayerDistances out;
  for (std::size_t l = 0; l < kNumStages; ++l) {
    const auto& a = f1.stages[l];
    const auto& b = f2.stages[l];
    double sum_rho = 0.0;
    for (int c = 0; c < a.channels; ++c) {
      const auto m = detail::channel_moments(a.channel(c), b.channel(c));
      sum_rho += std::clamp(m.cov / (m.sd_a * m.sd_b + eps), -1.0, 1.0);
    }
    out.d[l] = 1.0 - sum_rho / a.channels;
  }
  return out;
}

/// Layer combination for the LPIPS-style distance.
struct LpipsAvg {};
struct LpipsLin {
  /// One nonnegative weight per channel, per stage.
  std::vector<std::vector<double>> weights;
};
using LpipsWeights = std::variant<LpipsAvg, LpipsLin>;

inline constexpr double kLpipsNormEps = 1e-10;

/// Per stage: unit-normalize the channel vector at each position, take the
/// squared difference, sum over channels (weighted for `lin`), average over
/// positions. The result is the mean over stages.
inline double lpips_style(const FeatureStack& f1, const FeatureStack& f2, const LpipsWeights& weights = LpipsAvg{}) {
  require_same_shape(f1, f2, "lpips_style");
  const auto* lin = std::get_if<LpipsLin>(&weights);
  if (lin) {
    if (lin->weights.size() != f1.stages.size()) throw Error(errc::kShape, "lpips lin weights: stage count mismatch");
    for (std::size_t l = 0; l < f1.stages.size(); ++l) {
      if (lin->weights[l].size() != static_cast<std::size_t>(f1.stages[l].channels))
        throw Error(errc::kShape, "lpips lin weights: channel count mismatch at stage " + std::to_string(l + 1));
      for (double w : lin->weights[l])
        if (!(w >= 0.0)) throw Error(errc::kInvalidArgument, "lpips lin weights must be nonnegative");
    }
  }
  double total = 0.0;
  for (std::size_t l = 0; l < f1.stages.size(); ++l) {
    const auto& a = f1.stages[l];
    const auto& b = f2.stages[l];
    const std::size_t hw = a.spatial();
    std::vector<double> na(hw, 0.0), nb(hw, 0.0);
    for (int c = 0; c < a.channels; ++c) {
      auto ca = a.channel(c), cb = b.channel(c);
      for (std::size_t i = 0; i < hw; ++i) {
        na[i] += ca[i] * ca[i];
        nb[i] += cb[i] * cb[i];
      }
    }
    for (std::size_t i = 0; i < hw; ++i) {
      na[i] = std::sqrt(na[i]) + kLpipsNormEps;
      nb[i] = std::sqrt(nb[i]) + kLpipsNormEps;
    }
    double stage_sum = 0.0;
    for (int c = 0; c < a.channels; ++c) {
      const double w = lin ? lin->weights[l][c] : 1.0;
      auto ca = a.channel(c), cb = b.channel(c);
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = ca[i] / na[i] - cb[i] / nb[i];
        s += d * d;
      }
      stage_sum += w * s;
    }
    total += stage_sum / static_cast<double>(hw);
  }
  return total / static_cast<double>(f1.stages.size());
}

inline constexpr double kDistsC1 = 1e-6;
inline constexpr double kDistsC2 = 1e-6;

/// DISTS-style distance: per stage-channel texture term
/// (2 mu1 mu2 + c1) / (mu1^2 + mu2^2 + c1) and structure term
/// (2 cov + c2) / (var1 + var2 + c2), each weighted equally over all
/// stage-channels; distance = 1 - combined similarity.
inline double dists_style(const FeatureStack& f1, const FeatureStack& f2) {
  require_same_shape(f1, f2, "dists_style");
  double sim = 0.0;
  std::size_t terms = 0;
  for (std::size_t l = 0; l < f1.stages.size(); ++l) {
    const auto& a = f1.stages[l];
    const auto& b = f2.stages[l];
    for (int c = 0; c < a.channels; ++c) {
      const auto m = detail::channel_moments(a.channel(c), b.channel(c));
      const double texture = (2.0 * m.mean_a * m.mean_b + kDistsC1) / (m.mean_a * m.mean_a + m.mean_b * m.mean_b + kDistsC1);
      const double structure = (2.0 * m.cov + kDistsC2) / (m.sd_a * m.sd_a + m.sd_b * m.sd_b + kDistsC2);
      sim += 0.5 * texture + 0.5 * structure;
      ++terms;
    }
  }
  return std::max(0.0, 1.0 - sim / static_cast<double>(terms));
}

}  // namespace histosim
