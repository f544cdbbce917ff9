#ifndef VERISIEVE_ERROR_HPP
#define VERISIEVE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace verisieve {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  ZeroNorm,
  NonFiniteValue,
  InsufficientSamples,
  NotPositiveDefinite,
  DuplicateIdentity,
  UnknownIdentity,
  EmptyEnrollment,
  InfeasibleRegion,
  MagicMismatch,
  TruncatedPayload,
  InconsistentDimension,
  MalformedDocument,
  UnsupportedVersion,
  Io,
};

/// Domain error raised by every verisieve operation. The code lets callers
/// (CLI exit status, HTTP status mapping, tests) branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace verisieve

#endif  // VERISIEVE_ERROR_HPP
