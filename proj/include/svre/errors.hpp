#ifndef SVRE_ERRORS_HPP
#define SVRE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace svre {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An object was used out of order (e.g. gradient requested before a forward pass).
class StateError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Container file has a bad magic, version or header.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Container payload does not match its trailing CRC32 (includes truncation).
class ChecksumError : public Error {
 public:
  using Error::Error;
};

/// Stored weights do not match the architecture they are loaded into.
class SpecMismatchError : public Error {
 public:
  using Error::Error;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class QueryBudgetExceeded : public Error {
 public:
  using Error::Error;
};

}  // namespace svre

#endif  // SVRE_ERRORS_HPP
