#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "histosim/classical_metrics.hpp"
#include "histosim/deep_metrics.hpp"
#include "histosim/feature_extraction.hpp"
#include "histosim/fsim.hpp"
#include "histosim/haps.hpp"
#include "histosim/preprocess.hpp"

namespace histosim {

enum class MetricFamily { Classical, Deep, Haps };

struct MetricDescriptor {
  std::string name;
  Orientation orientation;
  std::vector<ChannelMode> channel_modes_allowed;
  MetricFamily family;
};

inline const std::vector<MetricDescriptor>& metric_registry() {
  static const std::vector<MetricDescriptor> reg = [] {
    const std::vector<ChannelMode> all{ChannelMode::RGB, ChannelMode::GRAY, ChannelMode::HED};
    using O = Orientation;
    using F = MetricFamily;
    return std::vector<MetricDescriptor>{
        {"psnr", O::HigherIsBetter, all, F::Classical},
        {"ncc", O::HigherIsBetter, all, F::Classical},
        {"mi", O::HigherIsBetter, all, F::Classical},
        {"ssim_w7", O::HigherIsBetter, all, F::Classical},
        {"ssim_w31", O::HigherIsBetter, all, F::Classical},
        {"ms-ssim", O::HigherIsBetter, all, F::Classical},
        {"fsim", O::HigherIsBetter, all, F::Classical},
        {"fsimc", O::HigherIsBetter, {ChannelMode::RGB}, F::Classical},
        {"lpips_avg", O::LowerIsBetter, all, F::Deep},
        {"lpips_lin", O::LowerIsBetter, all, F::Deep},
        {"dists", O::LowerIsBetter, all, F::Deep},
        {"haps", O::HigherIsBetter, all, F::Haps},
    };
  }();
  return reg;
}

inline const MetricDescriptor& find_metric(const std::string& name) {
  for (const auto& d : metric_registry())
    if (d.name == name) return d;
  throw Error(errc::kInvalidArgument, "unknown metric '" + name + "'");
}

/// Maps a raw score so that larger always means more similar.
inline double align(double score, Orientation o) { return o == Orientation::LowerIsBetter ? -score : score; }

inline std::vector<double> align(std::vector<double> scores, Orientation o) {
  for (double& s : scores) s = align(s, o);
  return scores;
}

/// Everything a scorer may need beyond the two patches.
struct ScorerOptions {
  std::optional<ExtractorSpec> extractor;
  std::optional<HapsHead> head;
  std::optional<LpipsLin> lpips_lin;
};

inline LpipsLin load_lpips_weights(const std::filesystem::path& path) {
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    return LpipsLin{j.get<std::vector<std::vector<double>>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kParse, "invalid lpips weights file " + path.string() + ": " + e.what());
  }
}

/// Scores preprocessed patch pairs with one registered metric. Holds its own
/// extractor instance, so use one scorer per worker thread.
class PairScorer {
 public:
  PairScorer(const std::string& metric, const ScorerOptions& opt) : desc_(&find_metric(metric)), opt_(opt) {
    if (desc_->family != MetricFamily::Classical) {
      if (!opt_.extractor) throw Error(errc::kInvalidArgument, "metric " + metric + " requires a feature extractor (--model)");
      ex_ = load_extractor(*opt_.extractor);
    }
    if (desc_->name == "lpips_lin" && !opt_.lpips_lin)
      throw Error(errc::kInvalidArgument, "metric lpips_lin requires channel weights (--lpips-weights)");
  }

  const MetricDescriptor& descriptor() const { return *desc_; }

  double score(const Patch& a, const Patch& b) {
    const auto& n = desc_->name;
    if (n == "psnr") return psnr(a, b);
    if (n == "ncc") return ncc(a, b);
    if (n == "mi") return mutual_information(a, b);
    if (n == "ssim_w7") return ssim(a, b, 7);
    if (n == "ssim_w31") return ssim(a, b, 31);
    if (n == "ms-ssim") return ms_ssim(a, b);
    if (n == "fsim") return fsim(a, b);
    if (n == "fsimc") return fsimc(a, b);
    if (n == "haps") {
      if (!opt_.head) throw Error(errc::kInvalidArgument, "metric haps requires a calibrated head (--head)");
      return haps_logit(layer_distances(a, b), *opt_.head);
    }
    const auto fa = ex_->extract(a), fb = ex_->extract(b);
    if (n == "lpips_avg") return lpips_style(fa, fb, LpipsAvg{});
    if (n == "lpips_lin") return lpips_style(fa, fb, *opt_.lpips_lin);
    return dists_style(fa, fb);
  }

  double score_pair(const Patch& he, const Patch& ihc, const PreprocessConfig& cfg) {
    const auto [a, b] = apply_pipeline(he, ihc, cfg);
    return score(a, b);
  }

  LayerDistances layer_distances(const Patch& a, const Patch& b) {
    if (!ex_) throw Error(errc::kInvalidArgument, "layer distances need a feature extractor");
    return channel_pearson_distance(ex_->extract(a), ex_->extract(b));
  }

 private:
  const MetricDescriptor* desc_;
  ScorerOptions opt_;
  std::unique_ptr<Extractor> ex_;
};

}  // namespace histosim
