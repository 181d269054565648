#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace oscar {

/// Error classes surfaced by the library. The numeric value doubles as the
/// CLI exit code, so existing values must not be renumbered.
enum class ErrorCode : int {
  MissingModel = 10,
  IdMismatch = 11,
  ShapeMismatch = 12,
  DegenerateMap = 13,
  IoError = 14,
  FormatError = 15,
  NotDivisible = 20,
  EmptyInput = 21,
  Not2D = 22,
  BadK = 23,
  NoForeground = 24,
  LengthMismatch = 30,
  ZeroVariance = 31,
  DegenerateProfile = 32,
  InvalidArgument = 33,
  AllDegenerate = 40,
  Infeasible = 50,
  BadShape = 60,
  EmptyGroup = 61,
  EmptyGrid = 62,
  BadConfig = 70,
};

inline std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingModel: return "MissingModel";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateMap: return "DegenerateMap";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::NotDivisible: return "NotDivisible";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::Not2D: return "Not2D";
    case ErrorCode::BadK: return "BadK";
    case ErrorCode::NoForeground: return "NoForeground";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::DegenerateProfile: return "DegenerateProfile";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::AllDegenerate: return "AllDegenerate";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::BadShape: return "BadShape";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

/// Single exception type for the library; `module()` names the component
/// that raised it so the CLI can report provenance.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string module, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + " [" + module + "]: " + message),
        code_(code),
        module_(std::move(module)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }
  int exit_code() const noexcept { return static_cast<int>(code_); }

 private:
  ErrorCode code_;
  std::string module_;
};

}  // namespace oscar
