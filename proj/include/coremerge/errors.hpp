// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace coremerge {

/// Error taxonomy shared by the library and the CLI exit-code mapping.
enum class ErrorKind {
  argument,   // bad parameter value or unsupported combination
  shape,      // matrix dimension mismatch
  schema,     // bundle/manifest inconsistency
  data,       // non-finite or otherwise invalid payload values
  io,         // filesystem / parse failures
  numerical,  // SVD non-convergence and friends
  scorer,     // external scorer protocol violation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ArgumentError : Error {
  explicit ArgumentError(const std::string& msg) : Error(ErrorKind::argument, msg) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(ErrorKind::shape, msg) {}
};
struct SchemaError : Error {
  explicit SchemaError(const std::string& msg) : Error(ErrorKind::schema, msg) {}
};
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(ErrorKind::io, msg) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& msg) : Error(ErrorKind::numerical, msg) {}
};
struct ScorerError : Error {
  explicit ScorerError(const std::string& msg) : Error(ErrorKind::scorer, msg) {}
};

const char* to_string(ErrorKind kind);

}  // namespace coremerge
