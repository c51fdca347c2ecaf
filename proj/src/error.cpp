#include "scot/error.hpp"

namespace scot {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::BadConfig: return "BadConfig";
    case ErrorKind::BadRange: return "BadRange";
    case ErrorKind::BadDims: return "BadDims";
    case ErrorKind::BadSizes: return "BadSizes";
    case ErrorKind::BadK: return "BadK";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptPayload: return "CorruptPayload";
    case ErrorKind::NotNormalized: return "NotNormalized";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::EmptyJoin: return "EmptyJoin";
    case ErrorKind::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorKind::SubsetMissingTarget: return "SubsetMissingTarget";
    case ErrorKind::UnknownId: return "UnknownId";
    case ErrorKind::UnknownSubsetId: return "UnknownSubsetId";
    case ErrorKind::NoRuleApplies: return "NoRuleApplies";
    case ErrorKind::TransportError: return "TransportError";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::DegenerateOutput: return "DegenerateOutput";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::StaleCache: return "StaleCache";
  }
  return "Unknown";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::BadConfig:
    case ErrorKind::BadRange:
    case ErrorKind::BadDims:
    case ErrorKind::BadSizes:
    case ErrorKind::BadK:
      return 2;
    case ErrorKind::ZeroVector:
    case ErrorKind::DegenerateOutput:
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::StaleCache:
      return 4;
    default:
      return 3;
  }
}

}  // namespace scot
