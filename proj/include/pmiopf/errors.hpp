#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pmiopf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed case text. `line()` is 1-based, 0 when unknown.
class CaseSyntaxError : public Error {
 public:
  CaseSyntaxError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed case text describing an invalid network.
class CaseSemanticError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or file content (bad config, fingerprint mismatch, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure diverged or failed to converge.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace pmiopf
