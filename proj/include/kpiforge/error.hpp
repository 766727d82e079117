#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kpiforge {

enum class ErrorCode {
  // tabular
  MissingColumn,
  DuplicateColumn,
  UnknownColumn,
  EmptyFile,
  TargetMissingValue,
  RejectedMissing,
  AllMissing,
  DegenerateSplit,
  InvalidSchema,
  ParseError,
  // cart / forest
  EmptyNode,
  EmptyTrainingSet,
  SchemaMismatch,
  InvalidParams,
  NoOobCoverage,
  // importance
  RepeatsZero,
  SeedCollision,
  TooFewFeatures,
  // kpi
  ThresholdInvalid,
  CrossMacroMerge,
  AlreadyDecided,
  UnknownCandidate,
  UnknownMacro,
  DuplicateMacro,
  InvalidMerge,
  StabilityMissing,
  // monitor
  FeatureSetMismatch,
  EmptyWindow,
  // synth
  InvalidSpec,
  InapplicableMutation,
  // io / config
  IoError,
  CorruptFile,
  UnsupportedVersion,
  InvalidConfig,
};

std::string_view error_code_name(ErrorCode code) noexcept;

// Every failure surfaced by the library. `context` carries a file path or
// file:line location when one is known.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string context = {});

  ErrorCode code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string context_;
  std::string detail_;
};

class NoOobCoverageError : public Error {
 public:
  explicit NoOobCoverageError(std::vector<std::size_t> rows);
  const std::vector<std::size_t>& rows() const noexcept { return rows_; }

 private:
  std::vector<std::size_t> rows_;
};

}  // namespace kpiforge
