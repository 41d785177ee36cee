#pragma once

#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "histosim/core_data.hpp"

namespace histosim {

/// Decodes PNG/TIFF into an RGB patch in [0, 1]: 8-bit samples are divided by
/// 255 and 16-bit samples by 65535. Single-channel files are replicated to RGB
/// and alpha is dropped, since the preprocessing pipeline expects RGB at entry.
inline Patch load_patch(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw Error(errc::kIo, "cannot decode image: " + path.string());
  double scale = 0.0;
  switch (img.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw Error(errc::kIo, "unsupported sample depth in " + path.string());
  }
  const int nc = img.channels();
  if (nc != 1 && nc != 3 && nc != 4) throw Error(errc::kIo, "unsupported channel count in " + path.string());
  cv::Mat f;
  img.convertTo(f, CV_64F, scale);
  Patch p(f.cols, f.rows, ColorSpace::RGB);
  for (int y = 0; y < f.rows; ++y) {
    const double* row = f.ptr<double>(y);
    for (int x = 0; x < f.cols; ++x) {
      if (nc == 1) {
        p.at(0, y, x) = p.at(1, y, x) = p.at(2, y, x) = row[x];
      } else {
        // OpenCV stores BGR(A).
        p.at(0, y, x) = row[x * nc + 2];
        p.at(1, y, x) = row[x * nc + 1];
        p.at(2, y, x) = row[x * nc + 0];
      }
    }
  }
  return p;
}

/// Writes a 16-bit PNG (or any format OpenCV infers from the extension).
inline void save_patch(const Patch& p, const std::filesystem::path& path) {
  const int nc = p.channels();
  cv::Mat m(p.height(), p.width(), CV_16UC(nc));
  for (int y = 0; y < p.height(); ++y) {
    auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < p.width(); ++x) {
      for (int c = 0; c < nc; ++c) {
        const int src = nc == 3 ? 2 - c : c;
        row[x * nc + c] = static_cast<std::uint16_t>(std::lround(p.at(src, y, x) * 65535.0));
      }
    }
  }
  if (!cv::imwrite(path.string(), m)) throw Error(errc::kIo, "cannot write image: " + path.string());
}

}  // namespace histosim
