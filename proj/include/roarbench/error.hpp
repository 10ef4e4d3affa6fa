#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace roarbench {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller passed an argument outside the operation's domain.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// An API was used in a way its contract forbids (e.g. backward on a non-scalar).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class UnsupportedMethod : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, const std::string& what)
      : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed binary or text input. offset() is the byte offset (binary) or
// line number (text) where parsing stopped.
class ParseError : public Error {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, DimensionOverflow, Syntax };

  ParseError(Kind kind, std::size_t offset, const std::string& what)
      : Error(what), kind_(kind), offset_(offset) {}
  Kind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(what + ": " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace roarbench
