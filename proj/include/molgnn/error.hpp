#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace molgnn {

enum class ErrorCode {
  // chemistry
  EmptyInput,
  UnclosedRing,
  UnbalancedParenthesis,
  UnknownAtomToken,
  InvalidBond,
  ValenceViolation,
  KekulizationFailure,
  // featurization
  UnknownFeatureName,
  EmptyBatch,
  ParseFailures,
  // graph tensor
  FieldMismatch,
  ShapeMismatch,
  RequiredFieldRemoval,
  InvalidGraph,
  // autodiff
  NonFiniteValue,
  DisconnectedOutput,
  // layers / model
  WidthMismatch,
  MissingEdgeFeature,
  LayoutMismatch,
  InvalidModel,
  // training
  EmptyMask,
  NonFiniteLoss,
  SingleClassTask,
  // dataset io
  MissingColumn,
  NoValidRows,
  DigestMismatch,
  TruncatedRecord,
  CorruptFile,
  BadFractions,
  // interpret
  MultiOutputUnsupported,
  BadLayerIndex,
  // rt filter
  TooFewResiduals,
  // plumbing
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every module error is raised as this exception; `code()` identifies the
/// failure for callers that branch on it (tests, the CLI exit-code mapping).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace molgnn
