#pragma once

#include <stdexcept>
#include <string>

namespace compnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content (bad magic, wrong rank, unknown keys, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

class LengthMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class InitError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch, int image)
      : Error(what), epoch_(epoch), image_(image) {}
  int epoch() const { return epoch_; }
  int image() const { return image_; }

 private:
  int epoch_;
  int image_;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Model and data disagree on feature-map geometry.
class GeometryError : public Error {
 public:
  using Error::Error;
};

}  // namespace compnet
