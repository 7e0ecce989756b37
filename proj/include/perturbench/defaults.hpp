#pragma once

#include <cstdint>

namespace pb::defaults {

// Desk-scale pipeline defaults. The CLI exposes all of these as flags; the
// acceptance run uses them verbatim, so changing one changes both.
inline constexpr long kTrainSubset = 5000;
inline constexpr long kEvalSubset = 1000;

inline constexpr int kSurrogateEpochs = 30;
inline constexpr double kSurrogateLr = 0.05;
inline constexpr int kTargetEpochs = 20;
inline constexpr double kTargetLr = 0.05;
inline constexpr int kCnnBatch = 64;

inline constexpr double kEpsilonLow = 4.0 / 255.0;
inline constexpr double kEpsilonHigh = 8.0 / 255.0;
inline constexpr double kPgdAlpha = 2.0 / 255.0;
inline constexpr int kPgdIterations = 10;

inline constexpr int kTuneFolds = 5;
inline constexpr long kTuneSubset = 2000;

}  // namespace pb::defaults
