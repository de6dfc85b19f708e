#pragma once

#include <stdexcept>
#include <string>

namespace noah {

// Base class for everything this library throws.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Mismatched tensor/matrix shapes or an inconsistent cache. Indicates a bug
// in the caller, not bad user input.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid hyper-parameters or command/config input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Problems with data or model files. Subclassed so callers can tell a
// malformed file from a short read.
class DataError : public Error {
 public:
  using Error::Error;
};

// Structurally malformed content: bad magic, bad header fields, checksum or
// consistency failures.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// Missing, unreadable, truncated or unwritable files.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace noah
