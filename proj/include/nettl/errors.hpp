#pragma once

#include <stdexcept>
#include <string>

namespace nettl {

enum class ErrorKind {
  ParamInvariantViolated,
  ProbabilityOutOfRange,
  DimensionMismatch,
  NotSymmetric,
  NotOrthonormal,
  KOutOfRange,
  KTooSmall,
  WidthTooSmall,
  RankCollapse,
  DegenerateCloud,
  DegenerateSimplex,
  NegativeRadicand,
  DegenerateDenominator,
  EmptySources,
  GenerationInfeasible,
  ParseError,
  IndexOutOfRange,
  IoError,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::ParamInvariantViolated: return "ParamInvariantViolated";
    case ErrorKind::ProbabilityOutOfRange: return "ProbabilityOutOfRange";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::NotOrthonormal: return "NotOrthonormal";
    case ErrorKind::KOutOfRange: return "KOutOfRange";
    case ErrorKind::KTooSmall: return "KTooSmall";
    case ErrorKind::WidthTooSmall: return "WidthTooSmall";
    case ErrorKind::RankCollapse: return "RankCollapse";
    case ErrorKind::DegenerateCloud: return "DegenerateCloud";
    case ErrorKind::DegenerateSimplex: return "DegenerateSimplex";
    case ErrorKind::NegativeRadicand: return "NegativeRadicand";
    case ErrorKind::DegenerateDenominator: return "DegenerateDenominator";
    case ErrorKind::EmptySources: return "EmptySources";
    case ErrorKind::GenerationInfeasible: return "GenerationInfeasible";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::IoError: return "IoError";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

} // namespace nettl
