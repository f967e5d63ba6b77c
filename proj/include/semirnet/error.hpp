#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace semirnet {

/// Broad failure classes; each maps onto one CLI exit code.
enum class ErrorKind {
  kConfig,     // bad configuration or file format (exit 2)
  kData,       // unreadable or invalid dataset (exit 3)
  kNumerical,  // non-finite values, failed decomposition (exit 4)
  kInvalidArgument,
  kNetwork,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

/// A file violated its declared format (dimension mismatch, bad header, ...).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

/// A single record could not be parsed. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(ErrorKind::kConfig, source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::kNumerical, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kInvalidArgument, what) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(ErrorKind::kInvalidArgument, what) {}
};

/// Cosine or normalization requested on a vector of zero norm.
class ZeroVectorError : public Error {
 public:
  explicit ZeroVectorError(const std::string& what) : Error(ErrorKind::kInvalidArgument, what) {}
};

/// A transient network failure; callers may retry or fall back to offline data.
class RetriableError : public Error {
 public:
  explicit RetriableError(const std::string& what) : Error(ErrorKind::kNetwork, what) {}
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kData:
      return 3;
    case ErrorKind::kNumerical:
      return 4;
    default:
      return 2;
  }
}

}  // namespace semirnet
