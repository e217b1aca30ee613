#pragma once

#include <stdexcept>
#include <string>

namespace subbag {

enum class ErrorKind {
  usage,                // invalid arguments or hyperparameters
  data,                 // unreadable, malformed or non-finite input
  singular,             // singular or ill-conditioned matrix
  non_convergence,      // root finder exhausted its iteration budget
  no_closed_form_bias,  // bc1 requested for a family without analytic bias
  non_finite,           // NaN or Inf produced while evaluating a family
};

/// Every failure raised by the library. The kind decides the CLI exit code:
/// usage -> 1, data -> 2, numerical kinds -> 3.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::usage: return 1;
      case ErrorKind::data: return 2;
      default: return 3;
    }
  }

  bool is_numerical() const noexcept { return exit_code() == 3; }

  /// Same kind, message prefixed with context such as a subsample id.
  Error with_context(const std::string& context) const {
    return Error(kind_, context + ": " + what());
  }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(ErrorKind::usage, message);
}

}  // namespace subbag
