// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace kdnas {

/// Broad failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  Validation,
  Decode,
  Remap,
  Embedding,
  Adaptation,
  Usage,
  Schema,
  Io,
  Internal,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorKind::Validation, what) {}
};

class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& what) : Error(ErrorKind::Decode, what) {}
};

class RemapError : public Error {
 public:
  explicit RemapError(const std::string& what) : Error(ErrorKind::Remap, what) {}
};

class EmbeddingError : public Error {
 public:
  explicit EmbeddingError(const std::string& what)
      : Error(ErrorKind::Embedding, what) {}
};

class AdaptationError : public Error {
 public:
  explicit AdaptationError(const std::string& what)
      : Error(ErrorKind::Adaptation, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(ErrorKind::Schema, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class InternalError : public Error {
 public:
  explicit InternalError(const std::string& what)
      : Error(ErrorKind::Internal, what) {}
};

}  // namespace kdnas
