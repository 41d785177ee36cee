#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "histosim/core_data.hpp"
#include "histosim/image_io.hpp"
#include "histosim/metrics.hpp"

namespace histosim {

struct ScoreFailure {
  std::string pair_id;
  std::string kind;
  std::string message;
};

struct ScoredManifest {
  DatasetManifest manifest;
  std::vector<ScoreFailure> failures;
};

inline constexpr double kMaxUnreadableFraction = 0.10;

/// Scores every record under the metric's registered name, preserving order.
/// A failing record gets NaN and a failure entry. More than 10% of records
/// with unreadable image files aborts the batch.
inline ScoredManifest score_manifest(const DatasetManifest& m, const std::string& metric, const PreprocessConfig& cfg,
                                     const ScorerOptions& opt, unsigned threads = 1) {
  const auto& desc = find_metric(metric);
  ScoredManifest out{m, {}};
  std::vector<std::optional<ScoreFailure>> fails(m.size());
  std::vector<double> scores(m.size(), std::nan(""));
  std::vector<char> unreadable(m.size(), 0);
  parallel_for_with_state(
      m.size(), threads, [&] { return PairScorer(desc.name, opt); },
      [&](PairScorer& scorer, std::size_t i) {
        const auto& r = m.records[i];
        Patch he, ihc;
        try {
          he = load_patch(m.resolve(r.he_path));
          ihc = load_patch(m.resolve(r.ihc_path));
        } catch (const Error& e) {
          unreadable[i] = 1;
          fails[i] = ScoreFailure{r.pair_id, e.kind(), e.what()};
          return;
        }
        try {
          scores[i] = scorer.score_pair(he, ihc, cfg);
        } catch (const Error& e) {
          fails[i] = ScoreFailure{r.pair_id, e.kind(), e.what()};
        }
      });
  const auto n_bad = static_cast<double>(std::count(unreadable.begin(), unreadable.end(), 1));
  if (n_bad > kMaxUnreadableFraction * static_cast<double>(m.size()))
    throw Error(errc::kBatch, std::to_string(static_cast<long>(n_bad)) + " of " + std::to_string(m.size()) +
                                  " records have unreadable image files");
  for (std::size_t i = 0; i < m.size(); ++i) {
    out.manifest.records[i].metric_scores[desc.name] = scores[i];
    if (fails[i]) out.failures.push_back(*fails[i]);
  }
  return out;
}

struct DropEntry {
  std::string pair_id;
  double score = std::nan("");
  /// 1-based position in ascending aligned-score order; 0 for NaN records.
  std::size_t rank = 0;
  std::string reason;
};

struct FilterResult {
  DatasetManifest manifest;
  std::vector<DropEntry> drops;
};

/// Drops NaN-scored records, then the floor(q * N) finite records with the
/// lowest orientation-aligned score. At equal scores the later record goes
/// first, so earlier records survive. Survivors keep manifest order.
inline FilterResult filter_bottom(const DatasetManifest& m, const std::string& metric_name, double q) {
  if (!(q >= 0.0 && q < 1.0)) throw Error(errc::kInvalidArgument, "fraction must lie in [0, 1)");
  const auto& desc = find_metric(metric_name);
  FilterResult out;
  out.manifest = m;
  out.manifest.records.clear();

  std::vector<std::size_t> finite;
  std::vector<double> aligned(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& r = m.records[i];
    auto it = r.metric_scores.find(metric_name);
    if (it == r.metric_scores.end())
      throw Error(errc::kValidation, "record " + r.pair_id + " has no score for metric " + metric_name);
    if (std::isfinite(it->second)) {
      aligned[i] = align(it->second, desc.orientation);
      finite.push_back(i);
    }
  }
  std::vector<std::size_t> order = finite;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (aligned[a] != aligned[b]) return aligned[a] < aligned[b];
    return a > b;
  });
  const auto n_drop = static_cast<std::size_t>(std::floor(q * static_cast<double>(finite.size())));
  std::vector<char> keep(m.size(), 0);
  std::vector<std::size_t> rank(m.size(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    rank[order[k]] = k + 1;
    keep[order[k]] = k >= n_drop;
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& r = m.records[i];
    const double s = r.metric_scores.at(metric_name);
    if (!std::isfinite(s)) out.drops.push_back({r.pair_id, s, 0, "nan-score"});
  }
  for (std::size_t k = 0; k < n_drop; ++k) {
    const auto& r = m.records[order[k]];
    out.drops.push_back({r.pair_id, r.metric_scores.at(metric_name), k + 1, "filtered"});
  }
  for (std::size_t i = 0; i < m.size(); ++i)
    if (keep[i]) out.manifest.records.push_back(m.records[i]);
  return out;
}

inline std::string drop_report_jsonl(const std::vector<DropEntry>& drops) {
  std::string out;
  for (const auto& d : drops) {
    nlohmann::ordered_json j;
    j["pair_id"] = d.pair_id;
    j["score"] = std::isfinite(d.score) ? nlohmann::ordered_json(d.score) : nlohmann::ordered_json(nullptr);
    j["rank"] = d.rank;
    j["reason"] = d.reason;
    out += j.dump() + "\n";
  }
  return out;
}

inline std::string scores_csv(const DatasetManifest& m, const std::string& metric, const PreprocessConfig& cfg) {
  std::string out = "pair_id,wsi_id,metric,preprocess,score\n";
  for (const auto& r : m.records) {
    auto it = r.metric_scores.find(metric);
    out += r.pair_id + "," + r.wsi_id + "," + metric + "," + format_config(cfg) + "," +
           format_double(it == r.metric_scores.end() ? std::nan("") : it->second) + "\n";
  }
  return out;
}

}  // namespace histosim
