#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "histosim/metrics.hpp"
#include "histosim/robustness.hpp"

namespace histosim {

/// Rescales medians to [0, 1] using the minimum and the 99th percentile as
/// the range ends. Distance curves are flipped so every line reads as
/// similarity.
inline std::vector<double> normalize_for_plot(const SensitivityCurve& c, Orientation o) {
  std::vector<double> v = align(c.medians, o);
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = quantile_type7(v, 0.99);
  for (double& x : v) x = hi > lo ? std::clamp((x - lo) / (hi - lo), 0.0, 1.0) : 1.0;
  return v;
}

/// One PNG per distortion kind named <kind>.png with a line per metric.
inline void write_curve_plots(const std::vector<SensitivityCurve>& curves, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::vector<const SensitivityCurve*>> by_kind;
  for (const auto& c : curves) by_kind[to_string(c.kind)].push_back(&c);
  const int W = 640, H = 420, L = 60, R = 160, T = 30, B = 50;
  for (const auto& [kind, list] : by_kind) {
    cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
    cv::rectangle(img, {L, T}, {W - R, H - B}, cv::Scalar(0, 0, 0));
    cv::putText(img, kind, {L, T - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.6, cv::Scalar(0, 0, 0));
    for (std::size_t m = 0; m < list.size(); ++m) {
      const auto& c = *list[m];
      const auto y = normalize_for_plot(c, find_metric(c.metric_name).orientation);
      const double dmax = c.deltas.back();
      const cv::Scalar col((m * 67) % 200, (m * 131 + 60) % 200, (m * 29 + 120) % 220);
      std::vector<cv::Point> pts;
      for (std::size_t k = 0; k < y.size(); ++k)
        pts.emplace_back(L + static_cast<int>((W - L - R) * c.deltas[k] / dmax),
                         H - B - static_cast<int>((H - T - B) * y[k]));
      cv::polylines(img, pts, false, col, 2, cv::LINE_AA);
      for (const auto& p : pts) cv::circle(img, p, 3, col, cv::FILLED);
      cv::putText(img, c.metric_name, {W - R + 10, T + 20 + 18 * static_cast<int>(m)}, cv::FONT_HERSHEY_SIMPLEX,
                  0.45, col);
    }
    const auto path = dir / (kind + ".png");
    if (!cv::imwrite(path.string(), img)) throw Error(errc::kIo, "cannot write plot: " + path.string());
  }
}

}  // namespace histosim
