#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace medvl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Box with zero width or height, or with inverted corners.
class InvalidBoxError : public Error {
 public:
  using Error::Error;
};

class OutOfBoundsError : public Error {
 public:
  using Error::Error;
};

/// Text does not follow the instruction template. `position()` is the byte
/// offset of the first divergence.
class TemplateMismatchError : public Error {
 public:
  TemplateMismatchError(const std::string& what, std::size_t position)
      : Error(what + " (at offset " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class UnknownTaskError : public Error {
 public:
  using Error::Error;
};

/// A record or target is missing a field or violates its schema. Line numbers
/// are 1-based; 0 means "not from a file".
class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, std::size_t line = 0, std::string field = {})
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line),
        field_(std::move(field)) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class ContextError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Cosine similarity against a zero vector, or text with nothing to embed.
class UndefinedSimilarityError : public Error {
 public:
  using Error::Error;
};

/// Bad caller-supplied data that is not a file schema problem.
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace medvl
