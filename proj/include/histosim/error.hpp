#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace histosim {

/// Library-wide exception. `kind` is a short machine-readable tag
/// (e.g. "parse-error", "degenerate-curve") that the CLI prints verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

namespace errc {
inline constexpr const char* kParse = "parse-error";
inline constexpr const char* kValidation = "validation-error";
inline constexpr const char* kShape = "shape-mismatch";
inline constexpr const char* kInvalidArgument = "invalid-argument";
inline constexpr const char* kIo = "io-error";
inline constexpr const char* kLoad = "load-error";
inline constexpr const char* kInference = "inference-error";
inline constexpr const char* kDegenerateCurve = "degenerate-curve";
inline constexpr const char* kUndefinedCorrelation = "undefined-correlation";
inline constexpr const char* kSingleClass = "single-class";
inline constexpr const char* kAllConfigsRejected = "all-configs-rejected";
inline constexpr const char* kBatch = "batch-error";
inline constexpr const char* kSplit = "split-impossible";
}  // namespace errc

}  // namespace histosim
