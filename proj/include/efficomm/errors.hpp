#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace efficomm {

/// Invalid configuration or mismatched parameter dimensions. Carries the
/// name of the offending field so operators can fix their config file.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A count or index argument outside its admissible range.
class RangeError : public std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// A scalar argument that violates a documented precondition.
class PreconditionError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Structurally inconsistent frame (shapes, roles) handed to a pipeline stage.
class FrameError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class EncodeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed byte stream. `offset()` is the byte position where decoding failed.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(std::size_t offset, const std::string& message)
      : std::runtime_error("offset " + std::to_string(offset) + ": " + message), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class GenerationError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Statistics or report requested over an empty or incompatible series.
class ReportError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace efficomm
