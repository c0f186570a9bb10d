#pragma once

#include <stdexcept>
#include <string>

namespace emedge {

// Base for every error raised by the library. Callers that only care about
// "something in emedge failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration value. The message names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& why)
      : Error("invalid configuration: " + field + ": " + why), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Timestamps went backwards on a stream that must be processed in order.
class OrderingError : public Error {
 public:
  using Error::Error;
};

class StorageError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

// Bounded command queue is full.
class BackpressureError : public Error {
 public:
  using Error::Error;
};

}  // namespace emedge
