// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_METRICS_HPP
#define EMG2KIN_METRICS_HPP

#include "emg2kin/common.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace emg2kin::metrics {

/// Sample Pearson correlation (two-pass).
inline double pearson(std::span<const double> a, std::span<const double> b) {
  emg2kin::detail::require(a.size() == b.size() && a.size() >= 2, ErrorCode::LengthMismatch,
                           "pearson needs two equal-length sequences of length >= 2");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(ErrorCode::ConstantInput, "pearson is undefined for a constant sequence");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Fraction of variance unexplained: sum (truth-pred)^2 / sum (truth-mean)^2.
inline double fvu(std::span<const double> pred, std::span<const double> truth) {
  emg2kin::detail::require(pred.size() == truth.size() && truth.size() >= 2, ErrorCode::LengthMismatch,
                           "fvu needs two equal-length sequences of length >= 2");
  const double n = static_cast<double>(truth.size());
  double mt = 0;
  for (double v : truth) mt += v;
  mt /= n;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    num += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    den += (truth[i] - mt) * (truth[i] - mt);
  }
  if (den == 0.0) throw Error(ErrorCode::ConstantTruth, "fvu is undefined for a constant ground truth");
  return num / den;
}

inline std::vector<double> column(const Matrix& m, Eigen::Index c) {
  std::vector<double> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) v[static_cast<std::size_t>(r)] = m(r, c);
  return v;
}

/// Percentile with linear interpolation between order statistics
/// (q in [0, 1]); NaNs are ignored.
inline double quantile(std::vector<double> values, double q) {
  std::erase_if(values, [](double v) { return std::isnan(v); });
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

struct MeanSe {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t n = 0;
};

inline MeanSe mean_and_standard_error(const std::vector<double>& values) {
  MeanSe out;
  double sum = 0;
  for (double v : values)
    if (!std::isnan(v)) {
      sum += v;
      ++out.n;
    }
  if (out.n == 0) return {std::nan(""), std::nan(""), 0};
  out.mean = sum / static_cast<double>(out.n);
  if (out.n < 2) return out;
  double ss = 0;
  for (double v : values)
    if (!std::isnan(v)) ss += (v - out.mean) * (v - out.mean);
  out.standard_error = std::sqrt(ss / static_cast<double>(out.n - 1)) / std::sqrt(static_cast<double>(out.n));
  return out;
}

}  // namespace emg2kin::metrics

#endif  // EMG2KIN_METRICS_HPP
