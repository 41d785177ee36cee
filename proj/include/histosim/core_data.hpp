#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "histosim/error.hpp"
#include "histosim/util.hpp"

namespace histosim {

enum class ColorSpace { RGB, GRAY, HEMATOXYLIN };

inline int channels_for(ColorSpace cs) { return cs == ColorSpace::RGB ? 3 : 1; }

inline const char* to_string(ColorSpace cs) {
  switch (cs) {
    case ColorSpace::RGB: return "rgb";
    case ColorSpace::GRAY: return "gray";
    case ColorSpace::HEMATOXYLIN: return "hematoxylin";
  }
  return "?";
}

/// Planar raster with values in [0, 1]. Plane c occupies
/// data[c*H*W, (c+1)*H*W) in row-major order.
class Patch {
 public:
  Patch() = default;

  Patch(int width, int height, ColorSpace cs)
      : width_(width), height_(height), cs_(cs),
        data_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0) * channels_for(cs), 0.0) {
    if (width <= 0 || height <= 0) throw Error(errc::kInvalidArgument, "patch dimensions must be positive");
  }

  Patch(int width, int height, ColorSpace cs, std::vector<double> data) : Patch(width, height, cs) {
    if (data.size() != data_.size())
      throw Error(errc::kInvalidArgument, "patch data size does not match width*height*channels");
    for (double v : data)
      if (!(v >= 0.0 && v <= 1.0)) throw Error(errc::kValidation, "patch values must lie in [0, 1]");
    data_ = std::move(data);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_for(cs_); }
  ColorSpace colorspace() const { return cs_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }
  double at(int c, int y, int x) const { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const Patch& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels() == o.channels();
  }

  friend bool operator==(const Patch& a, const Patch& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.cs_ == b.cs_ && a.data_ == b.data_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  ColorSpace cs_ = ColorSpace::GRAY;
  std::vector<double> data_;
};

inline void require_same_shape(const Patch& a, const Patch& b, const char* what) {
  if (!a.same_shape(b))
    throw Error(errc::kShape, std::string(what) + ": patches differ in shape (" + std::to_string(a.width()) + "x" +
                                  std::to_string(a.height()) + "x" + std::to_string(a.channels()) + " vs " +
                                  std::to_string(b.width()) + "x" + std::to_string(b.height()) + "x" +
                                  std::to_string(b.channels()) + ")");
}

struct PairRecord {
  std::string pair_id;
  std::string he_path;
  std::string ihc_path;
  std::string wsi_id;
  std::optional<int> expert_score;
  std::map<std::string, double> metric_scores;
};

enum class ThreeClass { Bad = 0, Borderline = 1, Good = 2 };
enum class BinaryClass { Bad = 0, Acceptable = 1 };

struct ClassLabel {
  ThreeClass three_class;
  BinaryClass binary;
  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

inline ClassLabel aggregate_label(int expert_score) {
  switch (expert_score) {
    case 1:
    case 2: return {ThreeClass::Bad, BinaryClass::Bad};
    case 3: return {ThreeClass::Borderline, BinaryClass::Acceptable};
    case 4:
    case 5: return {ThreeClass::Good, BinaryClass::Acceptable};
    default:
      throw Error(errc::kValidation, "expert score must be in 1..5, got " + std::to_string(expert_score));
  }
}

enum class SplitTag { Train, Test };

struct DatasetManifest {
  std::vector<PairRecord> records;
  std::optional<SplitTag> split_tag;
  /// Directory relative image paths are resolved against (the manifest's own directory when loaded).
  std::filesystem::path base_dir;

  std::size_t size() const { return records.size(); }

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    if (path.is_absolute() || base_dir.empty()) return path;
    return base_dir / path;
  }

  /// Distinct WSI ids in order of first appearance.
  std::vector<std::string> wsi_ids() const {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& r : records)
      if (seen.insert(r.wsi_id).second) out.push_back(r.wsi_id);
    return out;
  }
};

namespace detail {

inline void validate_record(const PairRecord& r, const std::string& where) {
  if (r.pair_id.empty()) throw Error(errc::kValidation, where + ": pair_id must be non-empty");
  if (r.wsi_id.empty()) throw Error(errc::kValidation, where + ": wsi_id must be non-empty");
  if (r.expert_score && (*r.expert_score < 1 || *r.expert_score > 5))
    throw Error(errc::kValidation, where + ": expert_score must be in 1..5, got " + std::to_string(*r.expert_score));
}

inline std::string required_string(const nlohmann::json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw Error(errc::kValidation, where + ": missing string field '" + key + "'");
  return it->get<std::string>();
}

}  // namespace detail

inline PairRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw Error(errc::kParse, where + ": expected a JSON object");
  PairRecord r;
  r.pair_id = detail::required_string(j, "pair_id", where);
  r.he_path = detail::required_string(j, "he_path", where);
  r.ihc_path = detail::required_string(j, "ihc_path", where);
  r.wsi_id = detail::required_string(j, "wsi_id", where);
  if (auto it = j.find("expert_score"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw Error(errc::kValidation, where + ": expert_score must be an integer");
    r.expert_score = it->get<int>();
  }
  if (auto it = j.find("scores"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw Error(errc::kValidation, where + ": scores must be an object");
    for (const auto& [name, value] : it->items()) {
      if (value.is_null())
        r.metric_scores[name] = std::nan("");
      else if (value.is_number())
        r.metric_scores[name] = value.get<double>();
      else
        throw Error(errc::kValidation, where + ": score '" + name + "' must be numeric or null");
    }
  }
  detail::validate_record(r, where);
  return r;
}

inline nlohmann::ordered_json record_to_json(const PairRecord& r) {
  nlohmann::ordered_json j;
  j["pair_id"] = r.pair_id;
  j["he_path"] = r.he_path;
  j["ihc_path"] = r.ihc_path;
  j["wsi_id"] = r.wsi_id;
  if (r.expert_score) j["expert_score"] = *r.expert_score;
  if (!r.metric_scores.empty()) {
    nlohmann::ordered_json scores = nlohmann::ordered_json::object();
    for (const auto& [name, v] : r.metric_scores) {
      if (std::isfinite(v))
        scores[name] = v;
      else
        scores[name] = nullptr;
    }
    j["scores"] = std::move(scores);
  }
  return j;
}

/// Parses JSON-Lines manifest text. Blank lines are ignored; line numbers in
/// errors are 1-based.
inline DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::unordered_set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(errc::kParse, where + ": " + e.what());
    }
    auto r = record_from_json(j, where);
    if (!ids.insert(r.pair_id).second) throw Error(errc::kValidation, where + ": duplicate pair_id '" + r.pair_id + "'");
    m.records.push_back(std::move(r));
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(errc::kIo, "manifest not found: " + path.string());
  auto m = parse_manifest(read_file(path));
  m.base_dir = path.parent_path();
  return m;
}

inline std::string manifest_to_jsonl(const DatasetManifest& m) {
  std::string out;
  for (const auto& r : m.records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  write_file_atomic(path, manifest_to_jsonl(m));
}

/// CSV export: fixed columns followed by one column per score name (sorted).
inline std::string manifest_to_csv(const DatasetManifest& m) {
  std::set<std::string> names;
  for (const auto& r : m.records)
    for (const auto& [k, v] : r.metric_scores) names.insert(k);
  std::string out = "pair_id,he_path,ihc_path,wsi_id,expert_score";
  for (const auto& n : names) out += "," + n;
  out += '\n';
  for (const auto& r : m.records) {
    out += r.pair_id + "," + r.he_path + "," + r.ihc_path + "," + r.wsi_id + ",";
    if (r.expert_score) out += std::to_string(*r.expert_score);
    for (const auto& n : names) {
      out += ",";
      if (auto it = r.metric_scores.find(n); it != r.metric_scores.end()) out += format_double(it->second);
    }
    out += '\n';
  }
  return out;
}

/// Rewrites relative image paths so they stay valid when the manifest is
/// written into `new_dir`.
inline DatasetManifest rebase_paths(DatasetManifest m, const std::filesystem::path& new_dir) {
  namespace fs = std::filesystem;
  const fs::path target = fs::absolute(new_dir.empty() ? fs::path(".") : new_dir).lexically_normal();
  const fs::path source = fs::absolute(m.base_dir.empty() ? fs::path(".") : m.base_dir).lexically_normal();
  if (source == target) return m;
  auto fix = [&](std::string& p) {
    fs::path path(p);
    if (path.is_absolute()) return;
    p = (source / path).lexically_normal().lexically_relative(target).generic_string();
  };
  for (auto& r : m.records) {
    fix(r.he_path);
    fix(r.ihc_path);
  }
  m.base_dir = new_dir;
  return m;
}

struct ManifestSplit {
  DatasetManifest train;
  DatasetManifest test;
};

/// Partitions WSIs into train/test. The train WSI count is round-half-up of
/// ratio * n_wsis, clamped to [1, n_wsis - 1] so neither side is empty.
inline ManifestSplit split_by_wsi(const DatasetManifest& manifest, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(errc::kInvalidArgument, "split ratio must lie in (0, 1)");
  auto wsis = manifest.wsi_ids();
  if (wsis.size() < 2) throw Error(errc::kSplit, "at least two distinct WSIs are required to split");
  std::sort(wsis.begin(), wsis.end());
  Rng rng(derive_seed(seed, {0x5B17}));
  rng.shuffle(wsis);
  const auto n = static_cast<double>(wsis.size());
  auto n_train = static_cast<std::size_t>(std::floor(ratio * n + 0.5));
  n_train = std::clamp<std::size_t>(n_train, 1, wsis.size() - 1);
  std::unordered_set<std::string> train_wsis(wsis.begin(), wsis.begin() + static_cast<std::ptrdiff_t>(n_train));

  ManifestSplit out;
  out.train.split_tag = SplitTag::Train;
  out.test.split_tag = SplitTag::Test;
  out.train.base_dir = out.test.base_dir = manifest.base_dir;
  for (const auto& r : manifest.records) (train_wsis.contains(r.wsi_id) ? out.train : out.test).records.push_back(r);
  return out;
}

}  // namespace histosim
