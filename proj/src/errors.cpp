#include "hetmed/errors.hpp"

namespace hetmed {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonBinaryTreatment: return "NonBinaryTreatment";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::ArmEmpty: return "ArmEmpty";
    case ErrorKind::InvalidDimension: return "InvalidDimension";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::InvalidLambda: return "InvalidLambda";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::GroupEmpty: return "GroupEmpty";
    case ErrorKind::FileError: return "FileError";
    case ErrorKind::SingularDesign: return "SingularDesign";
    case ErrorKind::Underdetermined: return "Underdetermined";
    case ErrorKind::MaxIterations: return "MaxIterations";
    case ErrorKind::SplitDegenerate: return "SplitDegenerate";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

bool Error::is_numerical() const noexcept {
  switch (kind_) {
    case ErrorKind::SingularDesign:
    case ErrorKind::Underdetermined:
    case ErrorKind::MaxIterations:
    case ErrorKind::SplitDegenerate:
      return true;
    default:
      return false;
  }
}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace hetmed
