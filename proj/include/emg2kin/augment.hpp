// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_AUGMENT_HPP
#define EMG2KIN_AUGMENT_HPP

#include "emg2kin/common.hpp"
#include "emg2kin/features.hpp"

#include <complex>
#include <numbers>
#include <random>
#include <vector>

namespace emg2kin::augment {

struct AugmentationConfig {
  int n_white = 30;
  int n_colored = 30;
  double max_amplitude = 0.1;       // z-scored feature units
  double colored_max_freq = 1e-7;   // rad/sample
  std::uint64_t seed = 0;

  void validate() const {
    emg2kin::detail::require(n_white >= 0 && n_colored >= 0, ErrorCode::InvalidConfig, "copy counts must be >= 0");
    emg2kin::detail::require(max_amplitude >= 0, ErrorCode::InvalidConfig, "max_amplitude must be >= 0");
    emg2kin::detail::require(colored_max_freq > 0 && colored_max_freq <= std::numbers::pi, ErrorCode::InvalidConfig,
                             "colored_max_freq must lie in (0, pi]");
  }
};

namespace detail {

// Scales m so that its largest absolute entry is exactly `peak`.
inline void rescale_peak(Matrix& m, double peak) {
  if (m.size() == 0) return;
  Eigen::Index r = 0, c = 0;
  const double current = m.cwiseAbs().maxCoeff(&r, &c);
  if (peak == 0.0 || current == 0.0) {
    m.setZero();
    return;
  }
  const double sign = m(r, c) < 0 ? -1.0 : 1.0;
  m *= peak / current;
  m = m.cwiseMax(-peak).cwiseMin(peak);
  m(r, c) = sign * peak;
}

}  // namespace detail

/// I.i.d. Gaussian matrix whose peak absolute entry equals max_amplitude.
inline Matrix white_noise(Eigen::Index rows, Eigen::Index dims, double max_amplitude, std::uint64_t seed) {
  emg2kin::detail::require(rows >= 1 && dims >= 1, ErrorCode::InvalidConfig, "noise shape must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, dims);
  for (Eigen::Index c = 0; c < dims; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
  detail::rescale_peak(m, max_amplitude);
  return m;
}

inline constexpr int kColoredComponents = 48;

/// Gaussian noise band-limited to (0, max_freq] rad/sample, synthesized as a
/// sum of random-phase sinusoids with frequencies drawn uniformly in the band,
/// then rescaled to the requested peak. For cutoffs far below 1/T each column
/// is a near-constant offset.
inline Matrix colored_noise(Eigen::Index rows, Eigen::Index dims, double max_freq_rad_per_sample, double max_amplitude,
                            std::uint64_t seed) {
  emg2kin::detail::require(rows >= 1 && dims >= 1, ErrorCode::InvalidConfig, "noise shape must be positive");
  emg2kin::detail::require(max_freq_rad_per_sample > 0 && max_freq_rad_per_sample <= std::numbers::pi,
                           ErrorCode::InvalidConfig, "max_freq must lie in (0, pi]");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix m = Matrix::Zero(rows, dims);
  for (Eigen::Index c = 0; c < dims; ++c) {
    for (int k = 0; k < kColoredComponents; ++k) {
      const double omega = max_freq_rad_per_sample * (1.0 - unif(rng));  // (0, max_freq]
      const std::complex<double> coef(normal(rng), -normal(rng));
      const std::complex<double> step = std::polar(1.0, omega);
      std::complex<double> phasor = 1.0;
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (r % 1024 == 0) phasor = std::polar(1.0, omega * static_cast<double>(r));
        m(r, c) += (coef * phasor).real();
        phasor *= step;
      }
    }
  }
  detail::rescale_peak(m, max_amplitude);
  return m;
}

/// Appends 60 (by default) noisy copies after each sequence. Only the 18
/// kinematic feature columns are corrupted.
inline std::vector<features::FeatureSequence> augment_training_set(const std::vector<features::FeatureSequence>& sequences,
                                                                   const AugmentationConfig& config) {
  config.validate();
  std::vector<features::FeatureSequence> out;
  out.reserve(sequences.size() * static_cast<std::size_t>(1 + config.n_white + config.n_colored));
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& src = sequences[s];
    out.push_back(src);
    const Eigen::Index t_len = src.features.rows();
    for (int copy = 0; copy < config.n_white + config.n_colored; ++copy) {
      const std::uint64_t seed = emg2kin::detail::derive_seed(config.seed, s, static_cast<std::uint64_t>(copy));
      const Matrix noise = copy < config.n_white
                               ? white_noise(t_len, kJoints, config.max_amplitude, seed)
                               : colored_noise(t_len, kJoints, config.colored_max_freq, config.max_amplitude, seed);
      features::FeatureSequence dup = src;
      dup.features.rightCols(kJoints) += noise;
      out.push_back(std::move(dup));
    }
  }
  return out;
}

}  // namespace emg2kin::augment

#endif  // EMG2KIN_AUGMENT_HPP
