#pragma once

#include <stdexcept>
#include <string>

namespace cytoxai {

/// Bad argument supplied by the caller (shape mismatch, out-of-range value, unknown enum name).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed configuration or dataset layout.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem or codec failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pretrained weights not available locally.
class FetchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cytoxai
