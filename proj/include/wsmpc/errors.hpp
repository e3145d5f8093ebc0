#ifndef WSMPC_ERRORS_HPP_
#define WSMPC_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wsmpc {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that describes an impossible object (too few waypoints,
// mismatched layer dimensions, ...).
class StructuralError : public Error {
 public:
  using Error::Error;
};

// A value outside its documented domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A numerical procedure produced something it cannot continue from.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace wsmpc

#endif  // WSMPC_ERRORS_HPP_
