#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedrefine {

// Invalid scenario or run configuration.  CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite training loss.  CLI maps this to exit code 3.
struct DivergenceError : std::runtime_error {
  size_t step;
  DivergenceError(const std::string& what, size_t step_)
      : std::runtime_error(what), step(step_) {}
};

// A required checkpoint or other stored artifact is absent or unreadable.
// CLI maps this to exit code 4.
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedrefine
