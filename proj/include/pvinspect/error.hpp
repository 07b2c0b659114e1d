#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace pvinspect {

// Broad failure categories. The CLI maps them onto its exit codes.
enum class ErrorCategory { Config, Input, Invariant };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string kind, const std::string& message)
      : std::runtime_error(message), category_(category), kind_(std::move(kind)) {}

  ErrorCategory category() const noexcept { return category_; }

  // Machine-readable name, e.g. "UnknownLabel" or "MissingView".
  const std::string& kind() const noexcept { return kind_; }

 private:
  ErrorCategory category_;
  std::string kind_;
};

inline Error input_error(std::string kind, const std::string& message) {
  return Error(ErrorCategory::Input, std::move(kind), message);
}

inline Error config_error(std::string kind, const std::string& message) {
  return Error(ErrorCategory::Config, std::move(kind), message);
}

inline Error invariant_error(std::string kind, const std::string& message) {
  return Error(ErrorCategory::Invariant, std::move(kind), message);
}

}  // namespace pvinspect
