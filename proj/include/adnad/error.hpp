#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace adnad {

enum class Errc {
  NonPositiveSample,
  DegenerateSample,
  InvalidPercentile,
  EmptyBuffer,
  ShapeMismatch,
  NonFinite,
  EmptyNode,
  DegenerateTrainingSet,
  InsufficientData,
  NotBootstrapped,
  LengthMismatch,
  UndefinedRate,
  SingleClass,
  MissingFile,
  SchemaMismatch,
  EmptyAfterFiltering,
  AllFeaturesConstant,
  InvalidConfig,
};

inline std::string_view errc_name(Errc e) {
  switch (e) {
    case Errc::NonPositiveSample: return "NonPositiveSample";
    case Errc::DegenerateSample: return "DegenerateSample";
    case Errc::InvalidPercentile: return "InvalidPercentile";
    case Errc::EmptyBuffer: return "EmptyBuffer";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFinite: return "NonFinite";
    case Errc::EmptyNode: return "EmptyNode";
    case Errc::DegenerateTrainingSet: return "DegenerateTrainingSet";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::NotBootstrapped: return "NotBootstrapped";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::UndefinedRate: return "UndefinedRate";
    case Errc::SingleClass: return "SingleClass";
    case Errc::MissingFile: return "MissingFile";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::EmptyAfterFiltering: return "EmptyAfterFiltering";
    case Errc::AllFeaturesConstant: return "AllFeaturesConstant";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

// Every library failure is an adnad::Error carrying a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace adnad
