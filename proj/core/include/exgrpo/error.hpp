#pragma once

#include <stdexcept>
#include <string>

namespace exgrpo {

/// Raised for every contract violation in the library. The message is the
/// stable, user-facing part (e.g. "unknown question", "stale rollout").
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace exgrpo
