#pragma once

#include <stdexcept>
#include <string>

namespace ddiag {

// Base error: carries a short machine-readable code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Input data or configuration is malformed.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// An estimator cannot produce a result for the given data.
class EstimationError : public Error {
 public:
  using Error::Error;
};

// Linear algebra or optimisation failure (rank deficiency, separation, ...).
class NumericError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

}  // namespace ddiag
