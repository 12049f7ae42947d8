#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aeval {

// All library failures derive from Error so callers can catch one type at
// stage boundaries (the pipeline aborts a single task on any Error).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts, bool transient)
      : Error(what), attempts_(attempts), transient_(transient) {}

  int attempts() const noexcept { return attempts_; }
  bool transient() const noexcept { return transient_; }

 private:
  int attempts_;
  bool transient_;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

class IntegrationError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t pair_index)
      : Error(what), pair_index_(pair_index) {}

  std::size_t pair_index() const noexcept { return pair_index_; }

 private:
  std::size_t pair_index_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace aeval
