#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bfseg {

enum class ErrorCode {
  EmptySeeds,
  InvalidThreshold,
  ThresholdMismatch,
  BadThreshold,
  BadBinSpec,
  ShapeMismatch,
  OddExtent,
  IndexOutOfWindow,
  NonFinite,
  MissingCache,
  BadClassIndex,
  ModeMismatch,
  MissingGradient,
  SceneTooSmall,
  BadConfig,
  EmptySplit,
  DecodeError,
  ExtentMismatch,
  UnparseableName,
  DuplicateId,
  BadParams,
  IoError,
  BadFormat,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptySeeds: return "EmptySeeds";
    case ErrorCode::InvalidThreshold: return "InvalidThreshold";
    case ErrorCode::ThresholdMismatch: return "ThresholdMismatch";
    case ErrorCode::BadThreshold: return "BadThreshold";
    case ErrorCode::BadBinSpec: return "BadBinSpec";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OddExtent: return "OddExtent";
    case ErrorCode::IndexOutOfWindow: return "IndexOutOfWindow";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::MissingCache: return "MissingCache";
    case ErrorCode::BadClassIndex: return "BadClassIndex";
    case ErrorCode::ModeMismatch: return "ModeMismatch";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::SceneTooSmall: return "SceneTooSmall";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::ExtentMismatch: return "ExtentMismatch";
    case ErrorCode::UnparseableName: return "UnparseableName";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadFormat: return "BadFormat";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bfseg
