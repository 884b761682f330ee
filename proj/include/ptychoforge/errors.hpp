#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ptychoforge {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid scalar argument (out of range, zero count, lo >= hi, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Array dimensions that violate an operation's shape contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A probe window that falls outside the object support.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Measured data that cannot be physical (negative intensities, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Division by an all-zero probe or object patch.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration document. `path()` is a JSON pointer to the key.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Malformed PTYT/PTYB stream. `offset()` is the byte where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// A required input artifact does not exist.
class MissingInputError : public Error {
 public:
  explicit MissingInputError(std::string path)
      : Error("missing input file: " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace ptychoforge
