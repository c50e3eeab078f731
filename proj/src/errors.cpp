#include "rosd/errors.hpp"

namespace rosd {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ZeroNormAtMaximum: return "ZeroNormAtMaximum";
    case ErrorCode::EmptyAfterFloor: return "EmptyAfterFloor";
    case ErrorCode::DegenerateTensor: return "DegenerateTensor";
    case ErrorCode::MixedImageIds: return "MixedImageIds";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::ZeroBudget: return "ZeroBudget";
    case ErrorCode::PartTooSmall: return "PartTooSmall";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::UnlabeledImage: return "UnlabeledImage";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

}  // namespace rosd
