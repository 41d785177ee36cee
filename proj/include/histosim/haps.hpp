#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "histosim/core_data.hpp"
#include "histosim/deep_metrics.hpp"
#include "histosim/feature_extraction.hpp"
#include "histosim/preprocess.hpp"

namespace histosim {

/// Linear head over the four layer distances. The logit is that of
/// P(Acceptable), so larger values mean more similar.
struct HapsHead {
  std::array<double, kNumStages> w{};
  double b = 0.0;
  std::string positive_class = "Acceptable";
  std::string trained_on;
  std::string created_at;

  friend bool operator==(const HapsHead&, const HapsHead&) = default;
};

inline double haps_logit(const LayerDistances& d, const HapsHead& head) {
  double z = head.b;
  for (std::size_t l = 0; l < kNumStages; ++l) z += head.w[l] * d.d[l];
  return z;
}

/// Distance orientation (negated logit), used for robustness curves.
inline double haps_distance(const LayerDistances& d, const HapsHead& head) { return -haps_logit(d, head); }

inline nlohmann::ordered_json to_json(const HapsHead& h) {
  nlohmann::ordered_json j;
  j["w"] = h.w;
  j["b"] = h.b;
  j["positive_class"] = h.positive_class;
  j["trained_on"] = h.trained_on;
  j["created_at"] = h.created_at;
  return j;
}

inline HapsHead head_from_json(const nlohmann::json& j) {
  HapsHead h;
  try {
    h.w = j.at("w").get<std::array<double, kNumStages>>();
    h.b = j.at("b").get<double>();
    h.positive_class = j.value("positive_class", std::string("Acceptable"));
    h.trained_on = j.value("trained_on", std::string());
    h.created_at = j.value("created_at", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kParse, std::string("invalid HAPS head: ") + e.what());
  }
  if (h.positive_class != "Acceptable")
    throw Error(errc::kValidation, "HAPS head positive_class must be 'Acceptable'");
  for (double v : h.w)
    if (!std::isfinite(v)) throw Error(errc::kValidation, "HAPS head weights must be finite");
  if (!std::isfinite(h.b)) throw Error(errc::kValidation, "HAPS head intercept must be finite");
  return h;
}

inline HapsHead load_head(const std::filesystem::path& path) {
  try {
    return head_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(errc::kParse, "invalid HAPS head file " + path.string() + ": " + e.what());
  }
}

inline void save_head(const HapsHead& h, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(h).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// L2-regularized logistic regression fitted with L-BFGS.

struct LogisticFit {
  std::vector<double> w;
  double b = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

struct LogisticOptions {
  double l2 = 1.0;
  int max_iter = 1000;
  double grad_tol = 1e-6;
  int history = 10;
  /// Starting point (weights followed by intercept); zeros when empty.
  std::vector<double> init;
};

namespace detail {

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Objective: sum_i [softplus(z_i) - y_i z_i] + l2/2 * |w|^2, intercept unpenalized.
struct LogisticObjective {
  std::span<const double> x;  // n x p, row-major
  std::span<const int> y;
  std::size_t p;
  double l2;

  double operator()(const std::vector<double>& theta, std::vector<double>& grad) const {
    const std::size_t n = y.size();
    grad.assign(p + 1, 0.0);
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = theta[p];
      for (std::size_t k = 0; k < p; ++k) z += theta[k] * x[i * p + k];
      f += softplus(z) - y[i] * z;
      const double r = sigmoid(z) - y[i];
      for (std::size_t k = 0; k < p; ++k) grad[k] += r * x[i * p + k];
      grad[p] += r;
    }
    for (std::size_t k = 0; k < p; ++k) {
      f += 0.5 * l2 * theta[k] * theta[k];
      grad[k] += l2 * theta[k];
    }
    return f;
  }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace detail

/// Fits P(y = 1 | x) = sigmoid(w.x + b). `x` holds n rows of `p` features.
/// Stops when |grad|_2 <= grad_tol or after max_iter iterations; the caller
/// decides how to report non-convergence.
inline LogisticFit fit_logistic(std::span<const double> x, std::span<const int> y, std::size_t p,
                                const LogisticOptions& opt = {}) {
  const std::size_t n = y.size();
  if (n == 0 || x.size() != n * p) throw Error(errc::kInvalidArgument, "fit_logistic: feature matrix size mismatch");
  if (opt.l2 < 0.0) throw Error(errc::kInvalidArgument, "fit_logistic: l2 must be nonnegative");
  bool has0 = false, has1 = false;
  for (int v : y) {
    if (v != 0 && v != 1) throw Error(errc::kInvalidArgument, "fit_logistic: labels must be 0 or 1");
    (v ? has1 : has0) = true;
  }
  if (!has0 || !has1) throw Error(errc::kSingleClass, "calibration needs both classes present");

  detail::LogisticObjective obj{x, y, p, opt.l2};
  std::vector<double> theta(p + 1, 0.0);
  if (!opt.init.empty()) {
    if (opt.init.size() != p + 1) throw Error(errc::kInvalidArgument, "fit_logistic: init has wrong length");
    theta = opt.init;
  }
  std::vector<double> grad;
  double f = obj(theta, grad);
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;

  LogisticFit fit;
  int it = 0;
  double gnorm = std::sqrt(detail::dot(grad, grad));
  while (gnorm > opt.grad_tol && it < opt.max_iter) {
    // Two-loop recursion for the search direction.
    std::vector<double> q = grad;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * detail::dot(s_hist[k], q);
      for (std::size_t j = 0; j < q.size(); ++j) q[j] -= alpha[k] * y_hist[k][j];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) gamma = detail::dot(s_hist.back(), y_hist.back()) / detail::dot(y_hist.back(), y_hist.back());
    else gamma = 1.0 / std::max(1.0, gnorm);
    for (double& v : q) v *= gamma;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * detail::dot(y_hist[k], q);
      for (std::size_t j = 0; j < q.size(); ++j) q[j] += s_hist[k][j] * (alpha[k] - beta);
    }
    std::vector<double> dir(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) dir[j] = -q[j];
    double slope = detail::dot(grad, dir);
    if (slope >= 0.0) {  // lost descent: restart from steepest descent
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t j = 0; j < dir.size(); ++j) dir[j] = -grad[j] / std::max(1.0, gnorm);
      slope = detail::dot(grad, dir);
    }

    // Backtracking line search with the Armijo condition.
    double step = 1.0;
    std::vector<double> trial(theta.size()), trial_grad;
    double trial_f = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t j = 0; j < theta.size(); ++j) trial[j] = theta[j] + step * dir[j];
      trial_f = obj(trial, trial_grad);
      if (std::isfinite(trial_f) && trial_f <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    ++it;
    if (!accepted) break;

    std::vector<double> s(theta.size()), yv(theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j) {
      s[j] = trial[j] - theta[j];
      yv[j] = trial_grad[j] - grad[j];
    }
    const double sy = detail::dot(s, yv);
    if (sy > 1e-16 * std::sqrt(detail::dot(s, s) * detail::dot(yv, yv))) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    theta = trial;
    grad = trial_grad;
    f = trial_f;
    gnorm = std::sqrt(detail::dot(grad, grad));
  }
  fit.w.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(p));
  fit.b = theta[p];
  fit.iterations = it;
  fit.grad_norm = gnorm;
  fit.converged = gnorm <= opt.grad_tol;
  return fit;
}

struct CalibrationResult {
  HapsHead head;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

/// Fits the HAPS head on (layer distances, binary label) pairs with
/// Acceptable = 1 and Bad = 0. A non-converged fit still returns the head;
/// inspect `converged` / `grad_norm`.
inline CalibrationResult calibrate(std::span<const LayerDistances> features, std::span<const BinaryClass> labels,
                                   double l2 = 1.0, int max_iter = 1000,
                                   std::optional<std::array<double, kNumStages + 1>> init = std::nullopt) {
  if (features.size() != labels.size()) throw Error(errc::kInvalidArgument, "calibrate: features/labels length mismatch");
  std::vector<double> x;
  x.reserve(features.size() * kNumStages);
  for (const auto& f : features) x.insert(x.end(), f.d.begin(), f.d.end());
  std::vector<int> y;
  y.reserve(labels.size());
  for (auto l : labels) y.push_back(l == BinaryClass::Acceptable ? 1 : 0);
  LogisticOptions opt;
  opt.l2 = l2;
  opt.max_iter = max_iter;
  if (init) opt.init.assign(init->begin(), init->end());
  const auto fit = fit_logistic(x, y, kNumStages, opt);
  CalibrationResult r;
  std::copy(fit.w.begin(), fit.w.end(), r.head.w.begin());
  r.head.b = fit.b;
  r.iterations = fit.iterations;
  r.grad_norm = fit.grad_norm;
  r.converged = fit.converged;
  return r;
}

/// Preprocess both patches, extract features and compute the four layer distances.
inline LayerDistances haps_layer_distances(const Patch& he, const Patch& ihc, const PreprocessConfig& cfg,
                                           Extractor& ex) {
  const auto [a, b] = apply_pipeline(he, ihc, cfg);
  return channel_pearson_distance(ex.extract(a), ex.extract(b));
}

inline double haps_score_pair(const Patch& he, const Patch& ihc, const PreprocessConfig& cfg, Extractor& ex,
                              const HapsHead& head) {
  return haps_logit(haps_layer_distances(he, ihc, cfg, ex), head);
}

}  // namespace histosim
