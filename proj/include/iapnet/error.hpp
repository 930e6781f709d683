#pragma once

#include <stdexcept>
#include <string>

namespace iapnet {

// Base class for every error raised by the library. The CLI maps
// ComputationError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class EncodeError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class ComputationError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLossError : public ComputationError {
 public:
  NonFiniteLossError(std::string head, int epoch)
      : ComputationError("non-finite loss in head '" + head + "' at epoch " +
                         std::to_string(epoch)),
        head_(std::move(head)) {}
  const std::string& head() const { return head_; }

 private:
  std::string head_;
};

}  // namespace iapnet
