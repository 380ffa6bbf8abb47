#pragma once

#include <stdexcept>
#include <string>

namespace enes {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (dimension mismatch, NaN input,
// incompatible kinds).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Points too close for a distance semimetric, or a retraction through the
// origin of the embedding space.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Guarded primitive evaluated outside its domain (division by ~0, sqrt of a
// negative number).
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

// Training diverged (NaN/Inf loss) or an iterative procedure failed.
class NumericFailure : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorCode { BadMagic, Truncated, VersionMismatch, Invalid };

class FormatError : public Error {
 public:
  FormatError(FormatErrorCode code, const std::string& what) : Error(what), code_(code) {}
  FormatErrorCode code() const noexcept { return code_; }

 private:
  FormatErrorCode code_;
};

}  // namespace enes
