// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_COMMON_HPP
#define EMG2KIN_COMMON_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

namespace emg2kin {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr int kEmgChannels = 7;
inline constexpr int kJoints = 18;
inline constexpr double kEmgRateHz = 1000.0;
inline constexpr double kKinRateHz = 100.0;
inline constexpr int kRateRatio = 10;

enum class ErrorCode {
  MissingColumn,
  NaNData,
  RateMismatch,
  EmptyTrial,
  UnknownTaskId,
  InvalidConfig,
  CutoffOutOfRange,
  SignalTooShort,
  FactorNotPositive,
  TooShort,
  RankDeficient,
  LengthMismatch,
  ShapeMismatch,
  NonFiniteActivation,
  EmptyDataset,
  DivergedLoss,
  ConstantInput,
  ConstantTruth,
  NegativeLevel,
  UntrainedModel,
  MissingArtifact,
  Io,
  Parse,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NaNData: return "NaNData";
    case ErrorCode::RateMismatch: return "RateMismatch";
    case ErrorCode::EmptyTrial: return "EmptyTrial";
    case ErrorCode::UnknownTaskId: return "UnknownTaskId";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::CutoffOutOfRange: return "CutoffOutOfRange";
    case ErrorCode::SignalTooShort: return "SignalTooShort";
    case ErrorCode::FactorNotPositive: return "FactorNotPositive";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::ConstantTruth: return "ConstantTruth";
    case ErrorCode::NegativeLevel: return "NegativeLevel";
    case ErrorCode::UntrainedModel: return "UntrainedModel";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Parse: return "Parse";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as an Error carrying a code the
/// caller can switch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

namespace detail {

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

// 64-bit mixer used to derive independent child seeds from a parent seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t s = splitmix64(base ^ 0x5851F42D4C957F2DULL);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ (b * 0x9E3779B97F4A7C15ULL));
  return splitmix64(s ^ (c * 0xC2B2AE3D27D4EB4FULL));
}

// Lossless text encoding for doubles.
inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw Error(ErrorCode::Parse, "not a number: '" + s + "'");
  return v;
}

}  // namespace detail
}  // namespace emg2kin

#endif  // EMG2KIN_COMMON_HPP
