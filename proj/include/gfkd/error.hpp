#pragma once

#include <stdexcept>
#include <string>

namespace gfkd {

// Invalid shapes, bad config values, malformed files.  The CLI maps this to
// exit code 1.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf detected mid-run (diverged optimizer, bad gradient).  Carries enough
// context to point at the culprit.  The CLI maps this to exit code 2.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gfkd
