#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rosd {

enum class ErrorCode {
  MalformedHeader,
  NonFiniteValue,
  ShapeMismatch,
  IoFailure,
  ParseError,
  ZeroNormAtMaximum,
  EmptyAfterFloor,
  DegenerateTensor,
  MixedImageIds,
  EmptySelection,
  ZeroBudget,
  PartTooSmall,
  MissingGroundTruth,
  UnlabeledImage,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above; the
// message names the offending file, image or field.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  // The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace rosd
