#pragma once

#include <stdexcept>
#include <string>

namespace dmpc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejected input: dimension mismatch, out-of-range index, invalid parameter.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Non-finite values surfaced during a numerical computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Every planning candidate became non-finite.
class PlanningFailure : public Error {
 public:
  using Error::Error;
};

/// A statistic was requested over too few samples.
class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// Training loss exceeded the divergence threshold.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

/// Failure while decoding a dataset or checkpoint file.
class ParseError : public Error {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kMalformedHeader, kTruncated, kIo };

  ParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Bad run configuration: unknown key, unparsable value, missing file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dmpc
