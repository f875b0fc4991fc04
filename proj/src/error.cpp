#include "molgnn/error.hpp"

namespace molgnn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnclosedRing: return "UnclosedRing";
    case ErrorCode::UnbalancedParenthesis: return "UnbalancedParenthesis";
    case ErrorCode::UnknownAtomToken: return "UnknownAtomToken";
    case ErrorCode::InvalidBond: return "InvalidBond";
    case ErrorCode::ValenceViolation: return "ValenceViolation";
    case ErrorCode::KekulizationFailure: return "KekulizationFailure";
    case ErrorCode::UnknownFeatureName: return "UnknownFeatureName";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::ParseFailures: return "ParseFailures";
    case ErrorCode::FieldMismatch: return "FieldMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::RequiredFieldRemoval: return "RequiredFieldRemoval";
    case ErrorCode::InvalidGraph: return "InvalidGraph";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::DisconnectedOutput: return "DisconnectedOutput";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::MissingEdgeFeature: return "MissingEdgeFeature";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::SingleClassTask: return "SingleClassTask";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NoValidRows: return "NoValidRows";
    case ErrorCode::DigestMismatch: return "DigestMismatch";
    case ErrorCode::TruncatedRecord: return "TruncatedRecord";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::BadFractions: return "BadFractions";
    case ErrorCode::MultiOutputUnsupported: return "MultiOutputUnsupported";
    case ErrorCode::BadLayerIndex: return "BadLayerIndex";
    case ErrorCode::TooFewResiduals: return "TooFewResiduals";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace molgnn
