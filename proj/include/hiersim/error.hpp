#pragma once

#include <stdexcept>
#include <string>

namespace hiersim {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& msg, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

// Explicit time stepping blew up (thickness non-finite or far above H0).
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& msg, int step)
      : Error(msg), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

// A covariance matrix failed Cholesky factorization.
class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace hiersim
