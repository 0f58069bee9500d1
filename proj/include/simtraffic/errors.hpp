#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace simtraffic {

// Bad input: malformed scenario, out-of-range parameter, broken invariant on
// construction. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
  ValidationError(const std::string& summary, std::vector<std::string> issues)
      : std::invalid_argument(join(summary, issues)), issues_(std::move(issues)) {}

  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::string& summary, const std::vector<std::string>& issues) {
    std::string out = summary;
    for (const auto& i : issues) out += "\n  " + i;
    return out;
  }
  std::vector<std::string> issues_;
};

// A run went numerically wrong: non-finite state, a-priori bound violated,
// step too large for the source term. Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace simtraffic
