// Batch front-end: score, search, eval, calibrate, robustness, filter, split.

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "histosim/histosim.hpp"

namespace fs = std::filesystem;
using namespace histosim;

namespace {

struct Common {
  unsigned threads = 1;
};

struct ModelArgs {
  std::string model, head, lpips_weights;

  void add(CLI::App* app, bool with_head = true) {
    app->add_option("--model", model, "extractor sidecar JSON, or 'synthetic' for the built-in backbone");
    if (with_head) app->add_option("--head", head, "HAPS head JSON");
    app->add_option("--lpips-weights", lpips_weights, "JSON array of per-stage channel weights for lpips_lin");
  }

  ScorerOptions options() const {
    ScorerOptions o;
    if (model == kSyntheticModel)
      o.extractor = synthetic_spec();
    else if (!model.empty())
      o.extractor = load_extractor_spec(model);
    if (!head.empty()) o.head = load_head(head);
    if (!lpips_weights.empty()) o.lpips_lin = load_lpips_weights(lpips_weights);
    return o;
  }
};

void warn(const std::string& kind, const std::string& msg, const std::string& pair_id = {}) {
  nlohmann::ordered_json j;
  j["warning"] = kind;
  if (!pair_id.empty()) j["pair_id"] = pair_id;
  j["message"] = msg;
  std::cerr << j.dump() << "\n";
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_manifest_to(DatasetManifest m, const fs::path& out) {
  m = rebase_paths(std::move(m), out.parent_path());
  save_manifest(m, out);
}

std::string utc_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) t = static_cast<std::time_t>(std::stoll(sde));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::pair<Patch, Patch> load_pair(const DatasetManifest& m, const PairRecord& r) {
  return {load_patch(m.resolve(r.he_path)), load_patch(m.resolve(r.ihc_path))};
}

/// Labeled records only; unlabeled ones are reported and skipped.
DatasetManifest labeled_only(const DatasetManifest& m) {
  DatasetManifest out = m;
  out.records.clear();
  std::size_t skipped = 0;
  for (const auto& r : m.records)
    if (r.expert_score)
      out.records.push_back(r);
    else
      ++skipped;
  if (skipped) warn("unlabeled-records", std::to_string(skipped) + " records without expert_score skipped");
  if (out.records.empty()) throw Error(errc::kValidation, "manifest has no records with expert_score");
  return out;
}

// ---------------------------------------------------------------------------

int cmd_score(const std::string& manifest, const std::string& metric, const std::string& config,
              const ModelArgs& model, const std::string& out, const Common& c) {
  const auto m = load_manifest(manifest);
  const auto cfg = parse_config(config);
  const auto scored = score_manifest(m, metric, cfg, model.options(), c.threads);
  for (const auto& f : scored.failures) warn("score-failure", f.kind + ": " + f.message, f.pair_id);
  if (ends_with(out, ".jsonl"))
    write_manifest_to(scored.manifest, out);
  else
    write_file_atomic(out, scores_csv(scored.manifest, find_metric(metric).name, cfg));
  return 0;
}

int cmd_search(const std::string& manifest, const std::string& metric, std::size_t k, double floor, double l2,
               bool restrict_modes, const ModelArgs& model, const std::string& out, const std::string& details,
               const Common& c) {
  const auto m = labeled_only(load_manifest(manifest));
  const auto& desc = find_metric(metric);
  ScorerOptions opt = model.options();
  if (desc.family == MetricFamily::Haps) opt.head.reset();
  (void)PairScorer(desc.name, opt);  // fail fast on missing resources
  for (const auto& r : m.records) load_pair(m, r);  // fail fast on unreadable files

  std::vector<int> expert;
  std::vector<std::string> wsi;
  for (const auto& r : m.records) {
    expert.push_back(*r.expert_score);
    wsi.push_back(r.wsi_id);
  }
  std::vector<PreprocessConfig> configs;
  for (const auto& cfg : enumerate_configs())
    if (!restrict_modes || std::count(desc.channel_modes_allowed.begin(), desc.channel_modes_allowed.end(),
                                      cfg.channel_mode))
      configs.push_back(cfg);

  ConfigPrepareFn prepare = [&](const PreprocessConfig& cfg) -> ConfigScoreFn {
    PairScorer scorer(desc.name, opt);
    if (desc.family == MetricFamily::Haps) {
      std::vector<LayerDistances> dist;
      for (const auto& r : m.records) {
        const auto [he, ihc] = load_pair(m, r);
        const auto [a, b] = apply_pipeline(he, ihc, cfg);
        dist.push_back(scorer.layer_distances(a, b));
      }
      return [dist, &expert, l2](std::span<const std::size_t> train, std::span<const std::size_t> eval) {
        std::vector<LayerDistances> f;
        std::vector<BinaryClass> y;
        for (auto i : train) {
          f.push_back(dist[i]);
          y.push_back(aggregate_label(expert[i]).binary);
        }
        const auto head = calibrate(f, y, l2).head;
        std::vector<double> s;
        for (auto i : eval) s.push_back(haps_logit(dist[i], head));
        return s;
      };
    }
    std::vector<double> all;
    for (const auto& r : m.records) {
      const auto [he, ihc] = load_pair(m, r);
      all.push_back(align(scorer.score_pair(he, ihc, cfg), desc.orientation));
    }
    return [all](std::span<const std::size_t>, std::span<const std::size_t> eval) {
      std::vector<double> s;
      for (auto i : eval) s.push_back(all[i]);
      return s;
    };
  };

  const auto res = stage_search(desc.name, configs, expert, wsi, prepare, k, floor, c.threads);
  if (!details.empty()) write_file_atomic(details, search_details_csv(res));
  write_file_atomic(out, report_csv(res));
  return 0;
}

int cmd_eval(const std::string& manifest, const std::string& metric, const std::string& config, std::size_t bootstrap,
             std::uint64_t seed, const ModelArgs& model, const std::string& out, const Common& c) {
  const auto m = labeled_only(load_manifest(manifest));
  const auto& desc = find_metric(metric);
  const auto cfg = parse_config(config);
  const auto scored = score_manifest(m, desc.name, cfg, model.options(), c.threads);
  for (const auto& f : scored.failures) warn("score-failure", f.kind + ": " + f.message, f.pair_id);
  LabeledScores d;
  for (const auto& r : scored.manifest.records) {
    const double s = r.metric_scores.at(desc.name);
    if (!std::isfinite(s)) continue;
    d.scores.push_back(align(s, desc.orientation));
    d.expert.push_back(*r.expert_score);
    d.wsi.push_back(r.wsi_id);
  }
  const auto rep = evaluate(desc.name, cfg, d, bootstrap, seed, c.threads);
  for (const auto& w : rep.warnings) warn("auroc-multiclass", w);
  if (rep.bootstrap && rep.bootstrap->skipped)
    warn("bootstrap-skipped", std::to_string(rep.bootstrap->skipped) + " of " +
                                  std::to_string(rep.bootstrap->iterations) + " iterations skipped");
  write_file_atomic(out, report_csv(rep));
  return 0;
}

int cmd_calibrate(const std::string& manifest, const std::string& config, double l2, int max_iter,
                  const ModelArgs& model, const std::string& out, const Common& c) {
  const auto m = labeled_only(load_manifest(manifest));
  const auto cfg = parse_config(config);
  ScorerOptions opt = model.options();
  opt.head.reset();
  std::vector<LayerDistances> dist(m.size());
  parallel_for_with_state(
      m.size(), c.threads, [&] { return PairScorer("haps", opt); },
      [&](PairScorer& s, std::size_t i) {
        const auto [he, ihc] = load_pair(m, m.records[i]);
        const auto [a, b] = apply_pipeline(he, ihc, cfg);
        dist[i] = s.layer_distances(a, b);
      });
  std::vector<BinaryClass> y;
  for (const auto& r : m.records) y.push_back(aggregate_label(*r.expert_score).binary);
  auto res = calibrate(dist, y, l2, max_iter);
  if (!res.converged)
    warn("calibration-not-converged", "gradient norm " + format_double(res.grad_norm) + " after " +
                                          std::to_string(res.iterations) + " iterations");
  res.head.trained_on = fs::path(manifest).filename().string() + ";config=" + format_config(cfg) +
                        ";n=" + std::to_string(m.size()) + ";model=" + model.model + ";l2=" + format_double(l2);
  res.head.created_at = utc_timestamp();
  save_head(res.head, out);
  return 0;
}

int cmd_robustness(const std::string& dir, const std::string& metrics, std::uint64_t seed, const ModelArgs& model,
                   const std::string& out, const std::string& indices, const std::string& plot_dir,
                   const Common& c) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) throw Error(errc::kIo, "patch directory not found: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (e.is_regular_file() && (ext == ".png" || ext == ".tif" || ext == ".tiff")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(errc::kIo, "no PNG/TIFF patches in " + dir);
  std::vector<Patch> patches;
  for (const auto& f : files) patches.push_back(load_patch(f));

  std::vector<std::string> names;
  std::stringstream ss(metrics);
  for (std::string n; std::getline(ss, n, ',');)
    if (!n.empty()) names.push_back(find_metric(n).name);
  if (names.empty()) throw Error(errc::kInvalidArgument, "no metrics given");

  const ScorerOptions opt = model.options();
  std::vector<SensitivityCurve> curves;
  for (const auto& name : names) {
    PairMetricFactory make = [&]() -> PairMetric {
      auto scorer = std::make_shared<PairScorer>(name, opt);
      return [scorer](const Patch& a, const Patch& b) { return scorer->score(a, b); };
    };
    auto cs = run_stress(patches, make, name, default_grids(), seed, c.threads);
    curves.insert(curves.end(), cs.begin(), cs.end());
  }
  for (const auto& cv : curves)
    if (sensitivity_indices(cv).degenerate)
      warn("degenerate-curve", cv.metric_name + "/" + to_string(cv.kind) + " has zero dynamic range");
  write_file_atomic(out, curves_csv(curves));
  write_file_atomic(indices, indices_csv(curves));
  if (!plot_dir.empty()) write_curve_plots(curves, plot_dir);
  return 0;
}

/// Merges a score CSV (pair_id and score columns, as written by `score`).
void merge_scores(DatasetManifest& m, const std::string& metric, const std::string& csv) {
  std::stringstream in(read_file(csv));
  std::string line;
  if (!std::getline(in, line)) throw Error(errc::kParse, "empty score file " + csv);
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ls(s);
    for (std::string f; std::getline(ls, f, ',');) out.push_back(f);
    return out;
  };
  const auto head = split(line);
  const auto col = [&](const char* name) {
    auto it = std::find(head.begin(), head.end(), name);
    if (it == head.end()) throw Error(errc::kParse, std::string("score file lacks column ") + name);
    return static_cast<std::size_t>(it - head.begin());
  };
  const std::size_t ci = col("pair_id"), cs = col("score");
  std::unordered_map<std::string, double> by_id;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() <= std::max(ci, cs)) throw Error(errc::kParse, csv + " line " + std::to_string(lineno) + ": too few fields");
    by_id[f[ci]] = f[cs] == "nan" ? std::nan("") : std::stod(f[cs]);
  }
  for (auto& r : m.records)
    if (auto it = by_id.find(r.pair_id); it != by_id.end()) r.metric_scores[metric] = it->second;
}

int cmd_filter(const std::string& manifest, const std::string& metric, double fraction, const std::string& scores,
               const std::string& out, const std::string& report) {
  auto m = load_manifest(manifest);
  const auto& name = find_metric(metric).name;
  if (!scores.empty()) merge_scores(m, name, scores);
  const auto res = filter_bottom(m, name, fraction);
  write_manifest_to(res.manifest, out);
  write_file_atomic(report, drop_report_jsonl(res.drops));
  return 0;
}

int cmd_split(const std::string& manifest, double ratio, std::uint64_t seed, const std::string& out_train,
              const std::string& out_test) {
  const auto m = load_manifest(manifest);
  const auto s = split_by_wsi(m, ratio, seed);
  write_manifest_to(s.train, out_train);
  write_manifest_to(s.test, out_test);
  return 0;
}

void print_error(const std::string& kind, const std::string& msg) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = msg;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"histosim: paired H&E / IHC patch similarity toolkit"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--threads", common.threads, "worker threads")->check(CLI::Range(1u, 1024u));

  std::string manifest, metric, config = "0|rgb|0|0|0|0", out;
  std::uint64_t seed = 0;
  ModelArgs model;

  auto* score = app.add_subcommand("score", "score every pair of a manifest");
  score->add_option("--manifest", manifest)->required();
  score->add_option("--metric", metric)->required();
  score->add_option("--config", config, "preprocessing code")->capture_default_str();
  score->add_option("--out", out, ".csv for a score table, .jsonl for a scored manifest")->required();
  model.add(score);

  std::size_t k = kDefaultFolds;
  double floor = kAucFloor, l2 = 1.0;
  bool restrict_modes = false;
  std::string details;
  auto* search = app.add_subcommand("search", "Stage 0/1 preprocessing search");
  search->add_option("--manifest", manifest)->required();
  search->add_option("--metric", metric)->required();
  search->add_option("--k", k)->capture_default_str();
  search->add_option("--auc-floor", floor)->capture_default_str();
  search->add_option("--l2", l2, "HAPS calibration penalty inside folds")->capture_default_str();
  search->add_flag("--restrict-modes", restrict_modes, "skip channel modes the metric does not support");
  search->add_option("--details", details, "per-config outcome CSV");
  search->add_option("--out", out)->required();
  model.add(search, false);

  std::size_t bootstrap = 1000;
  auto* eval = app.add_subcommand("eval", "Stage 2 evaluation with WSI bootstrap");
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--metric", metric)->required();
  eval->add_option("--config", config)->capture_default_str();
  eval->add_option("--bootstrap", bootstrap)->capture_default_str();
  eval->add_option("--seed", seed)->capture_default_str();
  eval->add_option("--out", out)->required();
  model.add(eval);

  int max_iter = 1000;
  auto* cal = app.add_subcommand("calibrate", "fit the HAPS head");
  cal->add_option("--manifest", manifest)->required();
  cal->add_option("--model", model.model)->required();
  cal->add_option("--config", config)->capture_default_str();
  cal->add_option("--l2", l2)->capture_default_str()->check(CLI::NonNegativeNumber);
  cal->add_option("--max-iter", max_iter)->capture_default_str();
  cal->add_option("--out", out)->required();

  std::string patches, metrics, indices, plot;
  auto* rob = app.add_subcommand("robustness", "distortion stress test");
  rob->add_option("--patches", patches)->required();
  rob->add_option("--metrics", metrics, "comma-separated metric names")->required();
  rob->add_option("--seed", seed)->capture_default_str();
  rob->add_option("--out", out)->required();
  rob->add_option("--indices", indices)->required();
  rob->add_option("--plot", plot, "directory for static plots");
  model.add(rob);

  double fraction = 0.25;
  std::string report, scores;
  auto* filt = app.add_subcommand("filter", "drop the lowest-scoring fraction");
  filt->add_option("--manifest", manifest)->required();
  filt->add_option("--metric", metric)->required();
  filt->add_option("--fraction", fraction)->capture_default_str();
  filt->add_option("--scores", scores, "score CSV to merge before filtering");
  filt->add_option("--out", out)->required();
  filt->add_option("--report", report)->required();

  double ratio = 0.8;
  std::string out_train, out_test;
  auto* split = app.add_subcommand("split", "WSI-grouped train/test split");
  split->add_option("--manifest", manifest)->required();
  split->add_option("--ratio", ratio)->capture_default_str();
  split->add_option("--seed", seed)->capture_default_str();
  split->add_option("--out-train", out_train)->required();
  split->add_option("--out-test", out_test)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage-error", e.what());
    return 2;
  }

  try {
    if (*score) return cmd_score(manifest, metric, config, model, out, common);
    if (*search) return cmd_search(manifest, metric, k, floor, l2, restrict_modes, model, out, details, common);
    if (*eval) return cmd_eval(manifest, metric, config, bootstrap, seed, model, out, common);
    if (*cal) return cmd_calibrate(manifest, config, l2, max_iter, model, out, common);
    if (*rob) return cmd_robustness(patches, metrics, seed, model, out, indices, plot, common);
    if (*filt) return cmd_filter(manifest, metric, fraction, scores, out, report);
    if (*split) return cmd_split(manifest, ratio, seed, out_train, out_test);
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal-error", e.what());
    return 1;
  }
  return 1;
}
