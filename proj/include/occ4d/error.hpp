#pragma once

#include <stdexcept>
#include <string>

namespace occ4d {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid geometry, mismatched specs, out-of-range indices.
class SpecError : public Error {
 public:
  using Error::Error;
};

// Inputs that do not satisfy a task mode or pipeline prerequisite.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Scene data that cannot be turned into a sample (missing poses, bad keys).
class ConstructionError : public Error {
 public:
  using Error::Error;
};

// Malformed files: bad magic, unknown version, truncated payloads, schema
// violations.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace occ4d
