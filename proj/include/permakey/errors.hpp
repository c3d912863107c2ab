#pragma once

#include <stdexcept>
#include <string>

namespace permakey {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values surfaced by a loss or forward pass.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int64_t batch_index)
      : Error(what + " (batch index " + std::to_string(batch_index) + ")"),
        batch_index_(batch_index) {}
  int64_t batch_index() const { return batch_index_; }

 private:
  int64_t batch_index_;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class BorderError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class IllegalTransitionError : public Error {
 public:
  using Error::Error;
};

class CollectionExhaustedError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace permakey
