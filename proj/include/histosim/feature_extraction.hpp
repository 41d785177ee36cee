#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "histosim/core_data.hpp"
#include "histosim/util.hpp"

namespace histosim {

/// One C x H x W feature map, channel-major.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  std::size_t spatial() const { return static_cast<std::size_t>(height) * width; }
  std::span<double> channel(int c) { return {data.data() + c * spatial(), spatial()}; }
  std::span<const double> channel(int c) const { return {data.data() + c * spatial(), spatial()}; }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

inline constexpr std::size_t kNumStages = 4;

struct FeatureStack {
  std::vector<FeatureMap> stages;
  friend bool operator==(const FeatureStack&, const FeatureStack&) = default;
};

inline void require_same_shape(const FeatureStack& a, const FeatureStack& b, const char* what) {
  if (a.stages.size() != b.stages.size())
    throw Error(errc::kShape, std::string(what) + ": stage count differs");
  for (std::size_t l = 0; l < a.stages.size(); ++l)
    if (!a.stages[l].same_shape(b.stages[l]))
      throw Error(errc::kShape, std::string(what) + ": stage " + std::to_string(l + 1) + " shapes differ");
}

inline constexpr const char* kSyntheticModel = "synthetic";

struct SyntheticParams {
  std::uint64_t seed = 1234;
  int base_channels = 8;
};

/// JSON sidecar describing an exported backbone.
struct ExtractorSpec {
  std::string model_path;
  int input_size = 256;
  std::vector<std::string> stage_names;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
  SyntheticParams synthetic;  // only read when model_path == "synthetic"

  bool is_synthetic() const { return model_path == kSyntheticModel; }
};

inline void validate(const ExtractorSpec& s) {
  if (s.stage_names.size() != kNumStages)
    throw Error(errc::kLoad, "extractor spec must name exactly 4 stages, got " + std::to_string(s.stage_names.size()));
  if (s.input_size < 32) throw Error(errc::kLoad, "extractor input_size must be at least 32");
  for (double v : s.std)
    if (!(v > 0.0)) throw Error(errc::kLoad, "extractor std values must be positive");
}

/// Reads a sidecar. Relative model paths resolve against $HISTOSIM_MODEL_DIR
/// when set, otherwise against the sidecar's directory.
inline ExtractorSpec load_extractor_spec(const std::filesystem::path& sidecar) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kLoad, "invalid extractor sidecar " + sidecar.string() + ": " + e.what());
  }
  ExtractorSpec s;
  try {
    s.model_path = j.at("model_path").get<std::string>();
    s.input_size = j.value("input_size", 256);
    s.stage_names = j.at("stage_names").get<std::vector<std::string>>();
    if (j.contains("mean")) s.mean = j.at("mean").get<std::array<double, 3>>();
    if (j.contains("std")) s.std = j.at("std").get<std::array<double, 3>>();
    if (auto it = j.find("synthetic"); it != j.end()) {
      s.synthetic.seed = it->value("seed", s.synthetic.seed);
      s.synthetic.base_channels = it->value("base_channels", s.synthetic.base_channels);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kLoad, "invalid extractor sidecar " + sidecar.string() + ": " + e.what());
  }
  if (!s.is_synthetic()) {
    std::filesystem::path mp(s.model_path);
    if (mp.is_relative()) {
      const char* env = std::getenv("HISTOSIM_MODEL_DIR");
      mp = (env && *env) ? std::filesystem::path(env) / mp : sidecar.parent_path() / mp;
    }
    s.model_path = mp.string();
  }
  validate(s);
  return s;
}

inline nlohmann::ordered_json to_json(const ExtractorSpec& s) {
  nlohmann::ordered_json j;
  j["model_path"] = s.model_path;
  j["input_size"] = s.input_size;
  j["stage_names"] = s.stage_names;
  j["mean"] = s.mean;
  j["std"] = s.std;
  if (s.is_synthetic()) j["synthetic"] = {{"seed", s.synthetic.seed}, {"base_channels", s.synthetic.base_channels}};
  return j;
}

/// Spec for the deterministic built-in backbone used in tests and demos.
inline ExtractorSpec synthetic_spec(std::uint64_t seed = 1234, int base_channels = 8, int input_size = 256) {
  ExtractorSpec s;
  s.model_path = kSyntheticModel;
  s.input_size = input_size;
  s.stage_names = {"stage1", "stage2", "stage3", "stage4"};
  s.mean = {0.5, 0.5, 0.5};
  s.std = {0.25, 0.25, 0.25};
  s.synthetic = {seed, base_channels};
  return s;
}

/// Bilinear resize with half-pixel centers (OpenCV INTER_LINEAR convention).
inline Patch resize_bilinear(const Patch& p, int out_w, int out_h) {
  if (p.width() == out_w && p.height() == out_h) return p;
  Patch out(out_w, out_h, p.colorspace());
  const double sx = static_cast<double>(p.width()) / out_w, sy = static_cast<double>(p.height()) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, p.height() - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, p.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, p.width() - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, p.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < p.channels(); ++c) {
        const double top = (1 - wx) * p.at(c, y0, x0) + wx * p.at(c, y0, x1);
        const double bot = (1 - wx) * p.at(c, y1, x0) + wx * p.at(c, y1, x1);
        out.at(c, y, x) = std::clamp((1 - wy) * top + wy * bot, 0.0, 1.0);
      }
    }
  }
  return out;
}

/// Frozen multi-stage feature extractor. Instances are not thread-safe; use
/// one per worker. Nothing in the interface exposes or mutates weights.
class Extractor {
 public:
  explicit Extractor(ExtractorSpec spec) : spec_(std::move(spec)) {}
  virtual ~Extractor() = default;
  Extractor(const Extractor&) = delete;
  Extractor& operator=(const Extractor&) = delete;

  const ExtractorSpec& spec() const { return spec_; }

  /// Resizes to input_size, replicates grayscale to three channels, applies
  /// the per-channel mean/std, then runs the backbone.
  FeatureStack extract(const Patch& p) {
    const int s = spec_.input_size;
    const Patch sized = resize_bilinear(p, s, s);
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    std::vector<double> input(3 * plane);
    for (int c = 0; c < 3; ++c) {
      auto src = sized.plane(sized.channels() == 3 ? c : 0);
      for (std::size_t i = 0; i < plane; ++i) input[c * plane + i] = (src[i] - spec_.mean[c]) / spec_.std[c];
    }
    FeatureStack out;
    try {
      out.stages = run(input, s);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(errc::kInference, std::string("feature extraction failed: ") + e.what());
    }
    if (out.stages.size() != kNumStages) throw Error(errc::kInference, "backbone did not return 4 stages");
    for (std::size_t l = 0; l < out.stages.size(); ++l) {
      for (double v : out.stages[l].data)
        if (!std::isfinite(v))
          throw Error(errc::kInference, "non-finite activation at stage " + spec_.stage_names[l]);
    }
    return out;
  }

 protected:
  /// `input` is a 3 x side x side normalized tensor.
  virtual std::vector<FeatureMap> run(const std::vector<double>& input, int side) = 0;

 private:
  ExtractorSpec spec_;
};

namespace detail {

struct ConvLayer {
  int in_c = 0, out_c = 0, k = 0, stride = 1, pad = 0;
  std::vector<double> weight;  // out_c x in_c x k x k
  std::vector<double> bias;
};

inline FeatureMap conv_leaky(const FeatureMap& x, const ConvLayer& L, double slope) {
  FeatureMap y;
  y.channels = L.out_c;
  y.height = (x.height + 2 * L.pad - L.k) / L.stride + 1;
  y.width = (x.width + 2 * L.pad - L.k) / L.stride + 1;
  y.data.assign(static_cast<std::size_t>(y.channels) * y.spatial(), 0.0);
  for (int o = 0; o < L.out_c; ++o) {
    auto dst = y.channel(o);
    for (int oy = 0; oy < y.height; ++oy)
      for (int ox = 0; ox < y.width; ++ox) {
        double acc = L.bias[o];
        for (int i = 0; i < L.in_c; ++i) {
          auto src = x.channel(i);
          const double* w = &L.weight[((static_cast<std::size_t>(o) * L.in_c + i) * L.k) * L.k];
          for (int ky = 0; ky < L.k; ++ky) {
            const int iy = oy * L.stride + ky - L.pad;
            if (iy < 0 || iy >= x.height) continue;
            for (int kx = 0; kx < L.k; ++kx) {
              const int ix = ox * L.stride + kx - L.pad;
              if (ix < 0 || ix >= x.width) continue;
              acc += w[ky * L.k + kx] * src[static_cast<std::size_t>(iy) * x.width + ix];
            }
          }
        }
        dst[static_cast<std::size_t>(oy) * y.width + ox] = acc >= 0.0 ? acc : slope * acc;
      }
  }
  return y;
}

}  // namespace detail

/// Fixed-seed random convolutional backbone: a 4x4/stride-4 stem followed by
/// three 3x3/stride-2 stages, widths C, 2C, 4C, 8C, leaky ReLU throughout.
/// Stage strides are 4/8/16/32.
class SyntheticExtractor final : public Extractor {
 public:
  explicit SyntheticExtractor(ExtractorSpec spec) : Extractor(std::move(spec)) {
    const auto& p = this->spec().synthetic;
    if (p.base_channels < 1) throw Error(errc::kLoad, "synthetic base_channels must be positive");
    Rng rng(derive_seed(p.seed, {0xFEA7}));
    int in_c = 3;
    for (std::size_t l = 0; l < kNumStages; ++l) {
      detail::ConvLayer L;
      L.in_c = in_c;
      L.out_c = p.base_channels << l;
      L.k = l == 0 ? 4 : 3;
      L.stride = l == 0 ? 4 : 2;
      L.pad = l == 0 ? 0 : 1;
      const double scale = std::sqrt(2.0 / (L.in_c * L.k * L.k));
      L.weight.resize(static_cast<std::size_t>(L.out_c) * L.in_c * L.k * L.k);
      for (double& w : L.weight) w = scale * rng.normal();
      L.bias.resize(static_cast<std::size_t>(L.out_c));
      for (double& b : L.bias) b = 0.05 * rng.normal();
      layers_.push_back(std::move(L));
      in_c = layers_.back().out_c;
    }
  }

 protected:
  std::vector<FeatureMap> run(const std::vector<double>& input, int side) override {
    FeatureMap x{3, side, side, input};
    std::vector<FeatureMap> out;
    for (const auto& L : layers_) {
      x = detail::conv_leaky(x, L, 0.1);
      out.push_back(x);
    }
    return out;
  }

 private:
  std::vector<detail::ConvLayer> layers_;
};

/// ONNX graph executed with OpenCV's DNN module. Stage names are graph tensor
/// names; each must resolve to a layer at load time.
class OnnxExtractor final : public Extractor {
 public:
  explicit OnnxExtractor(ExtractorSpec spec) : Extractor(std::move(spec)) {
    const auto& s = this->spec();
    if (!std::filesystem::exists(s.model_path)) throw Error(errc::kLoad, "model file not found: " + s.model_path);
    try {
      net_ = cv::dnn::readNetFromONNX(s.model_path);
    } catch (const cv::Exception& e) {
      throw Error(errc::kLoad, "cannot load ONNX model " + s.model_path + ": " + e.what());
    }
    if (net_.empty()) throw Error(errc::kLoad, "empty network loaded from " + s.model_path);
    net_.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
    net_.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
    for (const auto& name : s.stage_names) {
      if (net_.getLayerId(name) < 0) throw Error(errc::kLoad, "stage '" + name + "' not found in " + s.model_path);
      names_.push_back(name);
    }
  }

 protected:
  std::vector<FeatureMap> run(const std::vector<double>& input, int side) override {
    const int dims[4] = {1, 3, side, side};
    cv::Mat blob(4, dims, CV_32F);
    auto* dst = blob.ptr<float>();
    for (std::size_t i = 0; i < input.size(); ++i) dst[i] = static_cast<float>(input[i]);
    std::vector<cv::Mat> outs;
    try {
      net_.setInput(blob);
      net_.forward(outs, names_);
    } catch (const cv::Exception& e) {
      throw Error(errc::kInference, std::string("ONNX inference failed: ") + e.what());
    }
    std::vector<FeatureMap> stages;
    for (std::size_t l = 0; l < outs.size(); ++l) {
      const cv::Mat& m = outs[l];
      if (m.dims != 4 || m.size[0] != 1)
        throw Error(errc::kInference, "stage '" + names_[l] + "' is not a 1xCxHxW tensor");
      FeatureMap f{m.size[1], m.size[2], m.size[3], {}};
      const std::size_t n = static_cast<std::size_t>(f.channels) * f.spatial();
      cv::Mat flat;
      m.convertTo(flat, CV_64F);
      const double* src = flat.ptr<double>();
      f.data.assign(src, src + n);
      stages.push_back(std::move(f));
    }
    return stages;
  }

 private:
  cv::dnn::Net net_;
  std::vector<cv::String> names_;
};

inline std::unique_ptr<Extractor> load_extractor(const ExtractorSpec& spec) {
  validate(spec);
  if (spec.is_synthetic()) {
    for (std::size_t l = 0; l < kNumStages; ++l)
      if (spec.stage_names[l] != "stage" + std::to_string(l + 1))
        throw Error(errc::kLoad, "synthetic backbone has no stage named '" + spec.stage_names[l] + "'");
    return std::make_unique<SyntheticExtractor>(spec);
  }
  return std::make_unique<OnnxExtractor>(spec);
}

inline std::unique_ptr<Extractor> load_extractor(const std::filesystem::path& sidecar) {
  return load_extractor(load_extractor_spec(sidecar));
}

}  // namespace histosim
