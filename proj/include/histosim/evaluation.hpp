#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "histosim/core_data.hpp"
#include "histosim/preprocess.hpp"
#include "histosim/util.hpp"

namespace histosim {

/// Average ranks (1-based), ties receive the mean of the ranks they span.
inline std::vector<double> mid_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(errc::kUndefinedCorrelation, "correlation inputs differ in length");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw Error(errc::kUndefinedCorrelation, "correlation of a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman rho as the Pearson correlation of mid-ranks.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(errc::kUndefinedCorrelation, "spearman inputs differ in length");
  if (x.size() < 3) throw Error(errc::kUndefinedCorrelation, "spearman needs at least 3 observations");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
      throw Error(errc::kUndefinedCorrelation, "spearman inputs must be finite");
  const auto rx = mid_ranks(x), ry = mid_ranks(y);
  return pearson(rx, ry);
}

/// Mann-Whitney form: fraction of (positive, negative) pairs ordered
/// correctly, ties counted as one half. Computed from mid-rank sums.
inline double auroc_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(errc::kInvalidArgument, "auroc: scores/labels length mismatch");
  double n_pos = 0.0, n_neg = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(errc::kInvalidArgument, "auroc: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw Error(errc::kInvalidArgument, "auroc: scores must be finite");
    (labels[i] ? n_pos : n_neg) += 1.0;
  }
  if (n_pos == 0.0 || n_neg == 0.0) throw Error(errc::kSingleClass, "auroc needs both classes present");
  const auto r = mid_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (labels[i]) rank_sum += r[i];
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

/// Ordinal one-vs-rest AUROC over the three classes using one scalar score:
/// the mean over the cumulative splits {class >= Borderline} and
/// {class >= Good} against the rest. Splits with an empty side are skipped
/// and named in `warnings`.
inline double auroc_multiclass(std::span<const double> scores, std::span<const ThreeClass> labels,
                               std::vector<std::string>* warnings = nullptr) {
  if (scores.size() != labels.size()) throw Error(errc::kInvalidArgument, "auroc: scores/labels length mismatch");
  double sum = 0.0;
  int used = 0;
  for (int t : {1, 2}) {
    std::vector<int> y(labels.size());
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      y[i] = static_cast<int>(labels[i]) >= t ? 1 : 0;
      (y[i] ? pos : neg) = true;
    }
    if (!pos || !neg) {
      if (warnings) warnings->push_back(t == 1 ? "split Bad|Borderline+Good skipped: one side empty"
                                              : "split Bad+Borderline|Good skipped: one side empty");
      continue;
    }
    sum += auroc_binary(scores, y);
    ++used;
  }
  if (used == 0) throw Error(errc::kSingleClass, "multiclass auroc needs at least two classes present");
  return sum / used;
}

struct Fold {
  std::vector<std::size_t> train, valid;
};

/// WSIs in order of first appearance are dealt round-robin into k folds, so
/// fold sizes differ by at most one WSI.
inline std::vector<Fold> group_kfold(std::span<const std::string> wsi_ids, std::size_t k) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> fold_of;
  for (const auto& w : wsi_ids)
    if (!fold_of.contains(w)) {
      fold_of.emplace(w, order.size());
      order.push_back(w);
    }
  if (k < 2) throw Error(errc::kInvalidArgument, "group k-fold needs k >= 2");
  if (k > order.size())
    throw Error(errc::kSplit, "k = " + std::to_string(k) + " exceeds the number of WSIs (" +
                                  std::to_string(order.size()) + ")");
  for (auto& [w, i] : fold_of) i %= k;
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < wsi_ids.size(); ++i) {
    const std::size_t f = fold_of[wsi_ids[i]];
    for (std::size_t j = 0; j < k; ++j) (j == f ? folds[j].valid : folds[j].train).push_back(i);
  }
  return folds;
}

inline std::vector<Fold> group_kfold(const DatasetManifest& m, std::size_t k) {
  std::vector<std::string> ids;
  for (const auto& r : m.records) ids.push_back(r.wsi_id);
  return group_kfold(ids, k);
}

/// Labeled evaluation data: orientation-aligned scores with their expert
/// scores (1..5) and WSI groups.
struct LabeledScores {
  std::vector<double> scores;
  std::vector<int> expert;
  std::vector<std::string> wsi;

  std::size_t size() const { return scores.size(); }
  LabeledScores subset(std::span<const std::size_t> idx) const {
    LabeledScores s;
    for (auto i : idx) {
      s.scores.push_back(scores[i]);
      s.expert.push_back(expert[i]);
      s.wsi.push_back(wsi[i]);
    }
    return s;
  }
};

struct Statistics {
  double auc_bin = 0.0, auc_multi = 0.0, spearman = 0.0;
};

/// Spearman against the 1..5 expert score, AUROC against the binary and
/// three-class aggregations.
inline Statistics compute_statistics(const LabeledScores& d, std::vector<std::string>* warnings = nullptr) {
  std::vector<int> bin;
  std::vector<ThreeClass> three;
  std::vector<double> expert;
  for (int e : d.expert) {
    const auto l = aggregate_label(e);
    bin.push_back(l.binary == BinaryClass::Acceptable ? 1 : 0);
    three.push_back(l.three_class);
    expert.push_back(e);
  }
  Statistics s;
  s.auc_bin = auroc_binary(d.scores, bin);
  s.auc_multi = auroc_multiclass(d.scores, three, warnings);
  s.spearman = spearman(d.scores, expert);
  return s;
}

struct MeanStd {
  double mean = std::nan(""), std = std::nan("");
};

/// Population (ddof = 0) mean and standard deviation. Deviations are taken
/// from the first value so a constant sample yields exactly zero spread.
inline MeanStd mean_std(std::span<const double> v) {
  if (v.empty()) return {};
  const double x0 = v[0];
  double m = 0.0;
  for (double x : v) m += x - x0;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - x0 - m) * (x - x0 - m);
  return {x0 + m, std::sqrt(var / static_cast<double>(v.size()))};
}

struct BootstrapResult {
  MeanStd auc_bin, auc_multi, spearman;
  std::size_t iterations = 0, successful = 0, skipped = 0;
};

/// Resamples WSIs with replacement (as many as there are distinct WSIs),
/// pools all their records and recomputes the statistics. Iterations where
/// any statistic is undefined are skipped and counted.
inline BootstrapResult wsi_bootstrap(const LabeledScores& d, std::size_t iterations, std::uint64_t seed,
                                     unsigned threads = 1) {
  if (iterations < 1) throw Error(errc::kInvalidArgument, "bootstrap needs B >= 1");
  std::vector<std::string> wsis;
  std::unordered_map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto [it, fresh] = members.try_emplace(d.wsi[i]);
    if (fresh) wsis.push_back(d.wsi[i]);
    it->second.push_back(i);
  }
  if (wsis.empty()) throw Error(errc::kInvalidArgument, "bootstrap over an empty dataset");
  std::vector<std::optional<Statistics>> per(iterations);
  parallel_for(iterations, threads, [&](std::size_t b) {
    Rng rng(derive_seed(seed, {0xB007, b}));
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < wsis.size(); ++j) {
      const auto& m = members.at(wsis[rng.index(wsis.size())]);
      idx.insert(idx.end(), m.begin(), m.end());
    }
    try {
      per[b] = compute_statistics(d.subset(idx));
    } catch (const Error&) {
      per[b].reset();
    }
  });
  BootstrapResult r;
  r.iterations = iterations;
  std::vector<double> ab, am, sp;
  for (const auto& s : per)
    if (s) {
      ab.push_back(s->auc_bin);
      am.push_back(s->auc_multi);
      sp.push_back(s->spearman);
    }
  r.successful = ab.size();
  r.skipped = iterations - r.successful;
  if (r.successful == 0) throw Error(errc::kInvalidArgument, "no bootstrap iteration produced defined statistics");
  r.auc_bin = mean_std(ab);
  r.auc_multi = mean_std(am);
  r.spearman = mean_std(sp);
  return r;
}

struct EvalReport {
  std::string metric_name;
  PreprocessConfig config;
  double auc_bin = 0.0, auc_multi = 0.0, spearman = 0.0;
  std::optional<BootstrapResult> bootstrap;
  std::size_t n_pairs = 0, n_wsis = 0;
  std::vector<std::string> warnings;
};

inline EvalReport evaluate(const std::string& metric_name, const PreprocessConfig& cfg, const LabeledScores& d,
                           std::size_t bootstrap_iterations, std::uint64_t seed, unsigned threads = 1) {
  EvalReport r;
  r.metric_name = metric_name;
  r.config = cfg;
  const auto s = compute_statistics(d, &r.warnings);
  r.auc_bin = s.auc_bin;
  r.auc_multi = s.auc_multi;
  r.spearman = s.spearman;
  r.n_pairs = d.size();
  r.n_wsis = std::unordered_set<std::string>(d.wsi.begin(), d.wsi.end()).size();
  if (bootstrap_iterations > 0) r.bootstrap = wsi_bootstrap(d, bootstrap_iterations, seed, threads);
  return r;
}

inline constexpr double kAucFloor = 0.60;
inline constexpr std::size_t kDefaultFolds = 5;

/// Scores for one preprocessing config. `score(train, eval)` returns
/// orientation-aligned scores for the records in `eval`; trainable metrics
/// fit on `train` first, fixed metrics ignore it.
using ConfigScoreFn = std::function<std::vector<double>(std::span<const std::size_t> train,
                                                        std::span<const std::size_t> eval)>;
/// Prepares the scorer for a config; throwing rejects the config.
using ConfigPrepareFn = std::function<ConfigScoreFn(const PreprocessConfig&)>;

struct ConfigOutcome {
  PreprocessConfig config;
  double train_auc_bin = std::nan("");
  double cv_spearman = std::nan(""), cv_auc_bin = std::nan(""), cv_auc_multi = std::nan("");
  std::size_t folds_used = 0;
  bool survived_stage0 = false;
  bool eligible = false;
  std::string reason;
};

struct SearchResult {
  std::string metric_name;
  PreprocessConfig best_config;
  double cv_spearman = 0.0, cv_auc_bin = 0.0, cv_auc_multi = 0.0;
  bool survived_stage0 = false;
  std::vector<ConfigOutcome> outcomes;
};

/// Stage 0 drops configs whose whole-train auc_bin is below the floor.
/// Stage 1 keeps survivors whose mean fold auc_bin also clears the floor and
/// takes the highest mean fold Spearman; ties go to the higher auc_bin, then
/// to the lexicographically smaller config code. Folds where a statistic is
/// undefined are left out of the means.
inline SearchResult stage_search(const std::string& metric_name, const std::vector<PreprocessConfig>& configs,
                                 std::span<const int> expert, std::span<const std::string> wsi,
                                 const ConfigPrepareFn& prepare, std::size_t k = kDefaultFolds,
                                 double auc_floor = kAucFloor, unsigned threads = 1) {
  if (expert.size() != wsi.size()) throw Error(errc::kInvalidArgument, "search: label/group length mismatch");
  const auto folds = group_kfold(wsi, k);
  std::vector<std::size_t> all(expert.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  LabeledScores base;
  base.expert.assign(expert.begin(), expert.end());
  base.wsi.assign(wsi.begin(), wsi.end());

  SearchResult res;
  res.metric_name = metric_name;
  res.outcomes.resize(configs.size());
  parallel_for(configs.size(), threads, [&](std::size_t ci) {
    ConfigOutcome& o = res.outcomes[ci];
    o.config = configs[ci];
    try {
      const auto score = prepare(configs[ci]);
      LabeledScores whole = base;
      whole.scores = score(all, all);
      o.train_auc_bin = compute_statistics(whole).auc_bin;
      o.survived_stage0 = o.train_auc_bin >= auc_floor;
      if (!o.survived_stage0) {
        o.reason = "stage0: train auc_bin below floor";
        return;
      }
      double sp = 0.0, ab = 0.0, am = 0.0;
      for (const auto& f : folds) {
        try {
          LabeledScores v = whole.subset(f.valid);
          v.scores = score(f.train, f.valid);
          const auto s = compute_statistics(v);
          sp += s.spearman;
          ab += s.auc_bin;
          am += s.auc_multi;
          ++o.folds_used;
        } catch (const Error&) {
        }
      }
      if (o.folds_used == 0) {
        o.reason = "stage1: no fold produced defined statistics";
        return;
      }
      o.cv_spearman = sp / o.folds_used;
      o.cv_auc_bin = ab / o.folds_used;
      o.cv_auc_multi = am / o.folds_used;
      o.eligible = o.cv_auc_bin >= auc_floor;
      if (!o.eligible) o.reason = "stage1: mean fold auc_bin below floor";
    } catch (const Error& e) {
      o.reason = std::string("rejected: ") + e.kind() + ": " + e.what();
    }
  });

  const ConfigOutcome* best = nullptr;
  for (const auto& o : res.outcomes) {
    if (!o.eligible) continue;
    if (!best || o.cv_spearman > best->cv_spearman ||
        (o.cv_spearman == best->cv_spearman &&
         (o.cv_auc_bin > best->cv_auc_bin ||
          (o.cv_auc_bin == best->cv_auc_bin && format_config(o.config) < format_config(best->config)))))
      best = &o;
  }
  if (!best) throw Error(errc::kAllConfigsRejected, "no configuration passed the auc_bin floor");
  res.best_config = best->config;
  res.cv_spearman = best->cv_spearman;
  res.cv_auc_bin = best->cv_auc_bin;
  res.cv_auc_multi = best->cv_auc_multi;
  res.survived_stage0 = best->survived_stage0;
  return res;
}

namespace detail {
inline std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}
inline std::string pm(const MeanStd& m) { return format_fixed(m.mean, 3) + "±" + format_fixed(m.std, 3); }
}  // namespace detail

inline const char* kReportHeader = "metric,preprocess,auc_bin,auc_multi,sp,auc_bin_bs,auc_multi_bs,sp_bs\n";

inline std::string report_csv(const EvalReport& r) {
  std::string out = kReportHeader;
  out += r.metric_name + "," + format_config(r.config) + "," + format_fixed(r.auc_bin, 3) + "," +
         format_fixed(r.auc_multi, 3) + "," + format_fixed(r.spearman, 3);
  if (r.bootstrap)
    out += "," + detail::pm(r.bootstrap->auc_bin) + "," + detail::pm(r.bootstrap->auc_multi) + "," +
           detail::pm(r.bootstrap->spearman);
  else
    out += ",,,";
  return out + "\n";
}

/// One row for the selected config; statistics are fold means, bootstrap columns empty.
inline std::string report_csv(const SearchResult& r) {
  return std::string(kReportHeader) + r.metric_name + "," + format_config(r.best_config) + "," +
         format_fixed(r.cv_auc_bin, 3) + "," + format_fixed(r.cv_auc_multi, 3) + "," +
         format_fixed(r.cv_spearman, 3) + ",,,\n";
}

inline std::string search_details_csv(const SearchResult& r) {
  std::string out = "preprocess,train_auc_bin,survived_stage0,cv_spearman,cv_auc_bin,cv_auc_multi,folds_used,selected,reason\n";
  for (const auto& o : r.outcomes)
    out += format_config(o.config) + "," + format_double(o.train_auc_bin) + "," + (o.survived_stage0 ? "1" : "0") +
           "," + format_double(o.cv_spearman) + "," + format_double(o.cv_auc_bin) + "," +
           format_double(o.cv_auc_multi) + "," + std::to_string(o.folds_used) + "," +
           (o.config == r.best_config ? "1" : "0") + "," + detail::csv_safe(o.reason) + "\n";
  return out;
}

}  // namespace histosim
