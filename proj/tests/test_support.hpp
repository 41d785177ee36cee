#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sys/wait.h>
#include <unistd.h>
#include <string>
#include <vector>

#include "histosim/histosim.hpp"

namespace testing_support {

using namespace histosim;
namespace fs = std::filesystem;

inline Patch random_patch(int w, int h, ColorSpace cs, std::uint64_t seed) {
  Rng rng(seed);
  Patch p(w, h, cs);
  for (auto& v : p.values()) v = rng.uniform();
  return p;
}

/// Smooth multi-frequency texture with mild noise; values stay inside [0.05, 0.95].
inline Patch textured_patch(int w, int h, std::uint64_t seed, ColorSpace cs = ColorSpace::RGB) {
  Rng rng(seed);
  struct Wave {
    double fx, fy, ph, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 6; ++i)
    waves.push_back({rng.uniform(0.02, 0.15), rng.uniform(0.02, 0.15), rng.uniform(0.0, 6.28), rng.uniform(0.5, 1.0)});
  Patch p(w, h, cs);
  for (int c = 0; c < p.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0, a = 0.0;
        for (const auto& wv : waves) {
          s += wv.amp * std::sin(wv.fx * x + wv.fy * y + wv.ph + 0.7 * c);
          a += wv.amp;
        }
        const double v = 0.5 + 0.4 * s / a + 0.03 * (rng.uniform() - 0.5);
        p.at(c, y, x) = std::clamp(v, 0.05, 0.95);
      }
  return p;
}

inline Patch constant_patch(int w, int h, ColorSpace cs, double v) {
  Patch p(w, h, cs);
  for (auto& x : p.values()) x = v;
  return p;
}

inline FeatureStack random_stack(std::uint64_t seed, int base = 4, int side = 8) {
  Rng rng(seed);
  FeatureStack s;
  for (std::size_t l = 0; l < kNumStages; ++l) {
    FeatureMap m;
    m.channels = base << l;
    m.height = m.width = std::max(2, side >> l);
    m.data.resize(static_cast<std::size_t>(m.channels) * m.height * m.width);
    for (auto& v : m.data) v = rng.normal();
    s.stages.push_back(std::move(m));
  }
  return s;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("histosim_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

struct CliResult {
  int code;
  std::string err;
};

/// Runs the CLI with `args`, capturing standard error.
inline CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const auto err = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + HISTOSIM_CLI + "\" " + args + " 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  std::ifstream in(err);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, text};
}

inline std::string slurp(const fs::path& p) { return read_file(p); }

inline std::size_t count_lines(const fs::path& p) {
  const auto s = read_file(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

/// Writes `n` H&E/IHC PNG pairs plus manifest.jsonl into `dir`. Pair i belongs
/// to WSI i % n_wsi, carries expert score 1 + i % 5 and an IHC image that is a
/// noisier copy of the H&E image when the score is low.
inline DatasetManifest write_pair_dataset(const fs::path& dir, int n, int n_wsi, int side = 64) {
  fs::create_directories(dir / "he");
  fs::create_directories(dir / "ihc");
  DatasetManifest m;
  m.base_dir = dir;
  for (int i = 0; i < n; ++i) {
    const auto he = textured_patch(side, side, 1000 + i);
    auto ihc = he;
    const int score = 1 + i % 5;
    Rng rng(5000 + i);
    for (auto& v : ihc.values()) v = std::clamp(v + (6 - score) * 0.06 * (rng.uniform() - 0.5), 0.0, 1.0);
    PairRecord r;
    r.pair_id = "p" + std::to_string(1000 + i);
    r.he_path = "he/" + r.pair_id + ".png";
    r.ihc_path = "ihc/" + r.pair_id + ".png";
    r.wsi_id = "wsi" + std::to_string(i % n_wsi);
    r.expert_score = score;
    save_patch(he, dir / r.he_path);
    save_patch(ihc, dir / r.ihc_path);
    m.records.push_back(r);
  }
  write_file_atomic(dir / "manifest.jsonl", manifest_to_jsonl(m));
  return m;
}

}  // namespace testing_support
