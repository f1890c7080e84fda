#pragma once

#include <stdexcept>
#include <string>

namespace warpcal {

/// Input that violates a documented precondition (shape mismatch, NaN, bad bounds, ...).
class ValidationError : public std::invalid_argument {
public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// An iterative procedure could not produce a usable result.
class ConvergenceError : public std::runtime_error {
public:
  explicit ConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// A required file or artifact is absent or unreadable.
class MissingArtifactError : public std::runtime_error {
public:
  explicit MissingArtifactError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace warpcal
