#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace asft {

// Root of every error the library throws. `kind()` is a stable short tag used
// by the CLI when it prints machine-parsable diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error("parameter", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

// Malformed checkpoint or data file. `offset()` is the byte offset at which
// decoding failed.
class FormatError : public Error {
 public:
  FormatError(std::uint64_t offset, const std::string& what)
      : Error("format", what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class DegenerateAnchorError : public Error {
 public:
  explicit DegenerateAnchorError(const std::string& what)
      : Error("degenerate-anchor", what) {}
};

class NormalizationError : public Error {
 public:
  explicit NormalizationError(const std::string& what)
      : Error("normalization", what) {}
};

class UndefinedEplError : public Error {
 public:
  explicit UndefinedEplError(const std::string& what)
      : Error("undefined-epl", what) {}
};

}  // namespace asft
