#include "kpiforge/error.hpp"

#include <algorithm>
#include <sstream>

namespace kpiforge {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::DuplicateColumn: return "DuplicateColumn";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::TargetMissingValue: return "TargetMissingValue";
    case ErrorCode::RejectedMissing: return "RejectedMissing";
    case ErrorCode::AllMissing: return "AllMissing";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
    case ErrorCode::InvalidSchema: return "InvalidSchema";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyNode: return "EmptyNode";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::NoOobCoverage: return "NoOobCoverage";
    case ErrorCode::RepeatsZero: return "RepeatsZero";
    case ErrorCode::SeedCollision: return "SeedCollision";
    case ErrorCode::TooFewFeatures: return "TooFewFeatures";
    case ErrorCode::ThresholdInvalid: return "ThresholdInvalid";
    case ErrorCode::CrossMacroMerge: return "CrossMacroMerge";
    case ErrorCode::AlreadyDecided: return "AlreadyDecided";
    case ErrorCode::UnknownCandidate: return "UnknownCandidate";
    case ErrorCode::UnknownMacro: return "UnknownMacro";
    case ErrorCode::DuplicateMacro: return "DuplicateMacro";
    case ErrorCode::InvalidMerge: return "InvalidMerge";
    case ErrorCode::StabilityMissing: return "StabilityMissing";
    case ErrorCode::FeatureSetMismatch: return "FeatureSetMismatch";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InapplicableMutation: return "InapplicableMutation";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message, std::string context)
    : std::runtime_error(context.empty() ? message : context + ": " + message),
      code_(code),
      context_(std::move(context)),
      detail_(message) {}

namespace {

std::string describe_rows(const std::vector<std::size_t>& rows) {
  std::ostringstream out;
  out << rows.size() << " row(s) are in-bag for every tree:";
  const std::size_t shown = std::min<std::size_t>(rows.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) out << ' ' << rows[i];
  if (shown < rows.size()) out << " ...";
  return out.str();
}

}  // namespace

NoOobCoverageError::NoOobCoverageError(std::vector<std::size_t> rows)
    : Error(ErrorCode::NoOobCoverage, describe_rows(rows)), rows_(std::move(rows)) {}

}  // namespace kpiforge
