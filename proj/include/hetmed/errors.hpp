#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hetmed {

enum class ErrorKind {
  // validation
  MissingColumn,
  NonBinaryTreatment,
  NonFiniteValue,
  ArmEmpty,
  InvalidDimension,
  LengthMismatch,
  DimensionMismatch,
  InvalidLambda,
  InvalidConfig,
  GroupEmpty,
  FileError,
  // numerical
  SingularDesign,
  Underdetermined,
  MaxIterations,
  SplitDegenerate,
};

std::string_view to_string(ErrorKind kind);

// Every module error carries a kind so the CLI can map it onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  bool is_numerical() const noexcept;

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace hetmed
