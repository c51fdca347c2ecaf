#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scot {

enum class ErrorKind {
  // configuration
  BadConfig,
  BadRange,
  BadDims,
  BadSizes,
  BadK,
  // data
  IoError,
  BadMagic,
  VersionMismatch,
  CorruptPayload,
  NotNormalized,
  InvariantViolation,
  DuplicateId,
  ParseError,
  DimMismatch,
  ShapeMismatch,
  EmptyInput,
  EmptyBatch,
  EmptyDataset,
  EmptyJoin,
  MissingGroundTruth,
  SubsetMissingTarget,
  UnknownId,
  UnknownSubsetId,
  NoRuleApplies,
  TransportError,
  MalformedResponse,
  // numeric
  ZeroVector,
  DegenerateOutput,
  NonFiniteLoss,
  StaleCache,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Process exit code for an error kind: 2 config, 3 data, 4 numeric.
int exit_code(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace scot
