#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace classo {

enum class ErrorKind {
  InvalidArgument,
  Io,
  UnbalancedPanel,
  NonBinaryOutcome,
  DuplicateCell,
  MissingValue,
  AllUnitsDegenerate,
  PhaseOutOfRange,
  NoVariation,
  CollinearCovariates,
  NonConvergence,
  EmptyGroup,
  DegenerateCenters,
  PanelTooShort,
  HalfPanelDegenerate,
  EmptyCell,
  KMismatch,
};

// Coarse grouping used by the CLI to pick an exit code.
enum class ErrorCategory { Config, Data, Convergence, Mismatch };

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
    case ErrorKind::UnbalancedPanel: return "UnbalancedPanel";
    case ErrorKind::NonBinaryOutcome: return "NonBinaryOutcome";
    case ErrorKind::DuplicateCell: return "DuplicateCell";
    case ErrorKind::MissingValue: return "MissingValue";
    case ErrorKind::AllUnitsDegenerate: return "AllUnitsDegenerate";
    case ErrorKind::PhaseOutOfRange: return "PhaseOutOfRange";
    case ErrorKind::NoVariation: return "NoVariation";
    case ErrorKind::CollinearCovariates: return "CollinearCovariates";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::EmptyGroup: return "EmptyGroup";
    case ErrorKind::DegenerateCenters: return "DegenerateCenters";
    case ErrorKind::PanelTooShort: return "PanelTooShort";
    case ErrorKind::HalfPanelDegenerate: return "HalfPanelDegenerate";
    case ErrorKind::EmptyCell: return "EmptyCell";
    case ErrorKind::KMismatch: return "KMismatch";
  }
  return "Unknown";
}

inline ErrorCategory category_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument:
      return ErrorCategory::Config;
    case ErrorKind::NonConvergence:
    case ErrorKind::DegenerateCenters:
      return ErrorCategory::Convergence;
    case ErrorKind::KMismatch:
      return ErrorCategory::Mismatch;
    default:
      return ErrorCategory::Data;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  ErrorCategory category() const noexcept { return category_of(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace classo
