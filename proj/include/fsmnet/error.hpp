#pragma once

#include <stdexcept>
#include <string>

namespace fsmnet {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class UnsupportedShape : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during a computation. `what()` names the stage.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A file on disk is missing, truncated or malformed.
class LoadError : public Error {
 public:
  using Error::Error;
};

class CheckpointIncompatible : public Error {
 public:
  using Error::Error;
};

}  // namespace fsmnet
