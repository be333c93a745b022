// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_DSP_HPP
#define EMG2KIN_DSP_HPP

#include "emg2kin/common.hpp"

#include <algorithm>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

namespace emg2kin::dsp {

/// Transfer function b(z)/a(z) of a digital IIR filter, a[0] == 1.
struct FilterCoefficients {
  std::vector<double> numerator;
  std::vector<double> denominator;
  int order = 0;
  double cutoff_hz = 0.0;
  double fs_hz = 0.0;

  std::complex<double> response(double freq_hz) const {
    const std::complex<double> z_inv =
        std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / fs_hz);
    std::complex<double> num = 0.0, den = 0.0, zk = 1.0;
    for (std::size_t k = 0; k < numerator.size(); ++k) {
      num += numerator[k] * zk;
      den += denominator[k] * zk;
      zk *= z_inv;
    }
    return num / den;
  }

  double dc_gain() const {
    double num = 0.0, den = 0.0;
    for (double v : numerator) num += v;
    for (double v : denominator) den += v;
    return num / den;
  }

  /// Roots of the denominator, from the companion matrix.
  std::vector<std::complex<double>> poles() const {
    const int n = static_cast<int>(denominator.size()) - 1;
    if (n <= 0) return {};
    Matrix companion = Matrix::Zero(n, n);
    for (int j = 0; j < n; ++j) companion(0, j) = -denominator[j + 1] / denominator[0];
    for (int i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
    Eigen::EigenSolver<Matrix> solver(companion, false);
    std::vector<std::complex<double>> out;
    for (int i = 0; i < n; ++i) out.push_back(solver.eigenvalues()(i));
    return out;
  }
};

namespace detail {

inline std::vector<double> poly_from_roots(const std::vector<std::complex<double>>& roots) {
  std::vector<std::complex<double>> c{1.0};
  for (const auto& r : roots) {
    std::vector<std::complex<double>> next(c.size() + 1, 0.0);
    for (std::size_t k = 0; k < c.size(); ++k) {
      next[k] += c[k];
      next[k + 1] -= r * c[k];
    }
    c = std::move(next);
  }
  std::vector<double> out(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) out[k] = c[k].real();
  return out;
}

}  // namespace detail

/// Digital Butterworth lowpass by bilinear transform of the analog prototype,
/// with the cutoff prewarped so that |H(cutoff_hz)| = 1/sqrt(2) exactly.
inline FilterCoefficients butterworth_lowpass(int order, double cutoff_hz, double fs_hz) {
  emg2kin::detail::require(order >= 1, ErrorCode::InvalidConfig, "filter order must be >= 1");
  emg2kin::detail::require(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0, ErrorCode::CutoffOutOfRange,
                           "cutoff must lie in (0, fs/2)");
  const double pi = std::numbers::pi;
  const double warped = 2.0 * fs_hz * std::tan(pi * cutoff_hz / fs_hz);
  const double two_fs = 2.0 * fs_hz;

  std::vector<std::complex<double>> zpoles, zzeros;
  for (int k = 0; k < order; ++k) {
    const double theta = pi * (2.0 * k + order + 1) / (2.0 * order);
    const std::complex<double> s = warped * std::polar(1.0, theta);
    zpoles.push_back((two_fs + s) / (two_fs - s));
    zzeros.emplace_back(-1.0, 0.0);
  }
  FilterCoefficients c;
  c.numerator = detail::poly_from_roots(zzeros);
  c.denominator = detail::poly_from_roots(zpoles);
  double sum_num = 0.0, sum_den = 0.0;
  for (double v : c.numerator) sum_num += v;
  for (double v : c.denominator) sum_den += v;
  const double gain = sum_den / sum_num;
  for (double& v : c.numerator) v *= gain;
  c.order = order;
  c.cutoff_hz = cutoff_hz;
  c.fs_hz = fs_hz;
  return c;
}

/// Direct-form II transposed filtering with an explicit initial state.
inline std::vector<double> lfilter(const FilterCoefficients& c, std::span<const double> x,
                                   std::vector<double> state = {}) {
  const std::size_t n = c.denominator.size() - 1;
  state.resize(n, 0.0);
  const auto& b = c.numerator;
  const auto& a = c.denominator;
  std::vector<double> y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double xt = x[t];
    const double yt = b[0] * xt + (n > 0 ? state[0] : 0.0);
    for (std::size_t k = 0; k + 1 < n; ++k) state[k] = state[k + 1] + b[k + 1] * xt - a[k + 1] * yt;
    if (n > 0) state[n - 1] = b[n] * xt - a[n] * yt;
    y[t] = yt;
  }
  return y;
}

/// Initial state of lfilter for a unit step already in steady state.
inline std::vector<double> lfilter_steady_state(const FilterCoefficients& c) {
  const int n = static_cast<int>(c.denominator.size()) - 1;
  if (n <= 0) return {};
  const auto& a = c.denominator;
  const auto& b = c.numerator;
  Matrix companion_t = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) companion_t(j, 0) = -a[j + 1];
  for (int i = 1; i < n; ++i) companion_t(i - 1, i) = 1.0;
  const Matrix lhs = Matrix::Identity(n, n) - companion_t;
  Vector rhs(n);
  for (int k = 0; k < n; ++k) rhs(k) = b[k + 1] - a[k + 1] * b[0];
  const Vector zi = lhs.partialPivLu().solve(rhs);
  return {zi.data(), zi.data() + n};
}

/// Reflection length used by zero_phase_filter: three cutoff periods, never
/// less than 3*order and never more than n-1.
inline std::size_t zero_phase_padding(const FilterCoefficients& c, std::size_t n) {
  const std::size_t floor_pad = 3 * static_cast<std::size_t>(c.order);
  const auto settle = static_cast<std::size_t>(std::ceil(3.0 * c.fs_hz / c.cutoff_hz));
  return std::max(floor_pad, std::min(settle, n - 1));
}

enum class EdgeReflection { odd, even };

/// Forward-backward filtering. Edges are extended by reflection (odd by
/// default; see zero_phase_padding) and both passes start from the steady
/// state of the first extended sample.
inline std::vector<double> zero_phase_filter(const FilterCoefficients& c, std::span<const double> x,
                                             EdgeReflection edges = EdgeReflection::odd) {
  emg2kin::detail::require(x.size() > 3 * static_cast<std::size_t>(c.order), ErrorCode::SignalTooShort,
                           "zero-phase filtering needs more than 3*order samples");
  const std::size_t n = x.size();
  const std::size_t pad = zero_phase_padding(c, n);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  const bool odd = edges == EdgeReflection::odd;
  for (std::size_t k = pad; k >= 1; --k) ext.push_back(odd ? 2.0 * x[0] - x[k] : x[k]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t k = 1; k <= pad; ++k) ext.push_back(odd ? 2.0 * x[n - 1] - x[n - 1 - k] : x[n - 1 - k]);

  const std::vector<double> zi = lfilter_steady_state(c);
  auto scaled = [&](double s) {
    std::vector<double> z(zi);
    for (double& v : z) v *= s;
    return z;
  };
  std::vector<double> fwd = lfilter(c, ext, scaled(ext.front()));
  std::reverse(fwd.begin(), fwd.end());
  std::vector<double> bwd = lfilter(c, fwd, scaled(fwd.front()));
  std::reverse(bwd.begin(), bwd.end());
  return {bwd.begin() + static_cast<std::ptrdiff_t>(pad),
          bwd.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

/// Row-wise zero-phase filtering of a [channels x samples] matrix.
inline Matrix zero_phase_filter_rows(const FilterCoefficients& c, const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index t = 0; t < x.cols(); ++t) row[t] = x(r, t);
    const auto y = zero_phase_filter(c, row);
    for (Eigen::Index t = 0; t < x.cols(); ++t) out(r, t) = y[t];
  }
  return out;
}

inline std::vector<double> rectify(std::span<const double> x) {
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return std::abs(v); });
  return y;
}

/// Keeps samples 0, factor, 2*factor, ... The caller band-limits first.
inline std::vector<double> decimate(std::span<const double> x, int factor) {
  emg2kin::detail::require(factor > 0, ErrorCode::FactorNotPositive, "decimation factor must be positive");
  std::vector<double> y;
  y.reserve((x.size() + factor - 1) / factor);
  for (std::size_t i = 0; i < x.size(); i += static_cast<std::size_t>(factor)) y.push_back(x[i]);
  return y;
}

/// Second time derivative of each row of `angles` [joints x T]: central
/// differences inside, second-order one-sided four-point stencils at both
/// ends. Units: input units per second squared.
inline Matrix differentiate_twice(const Matrix& angles, double fs_hz) {
  const Eigen::Index n = angles.cols();
  emg2kin::detail::require(n >= 5, ErrorCode::TooShort, "double differentiation needs at least 5 samples");
  const double fs2 = fs_hz * fs_hz;
  Matrix out(angles.rows(), n);
  for (Eigen::Index r = 0; r < angles.rows(); ++r) {
    auto th = angles.row(r);
    for (Eigen::Index t = 1; t + 1 < n; ++t) out(r, t) = (th(t + 1) - 2.0 * th(t) + th(t - 1)) * fs2;
    out(r, 0) = (2.0 * th(0) - 5.0 * th(1) + 4.0 * th(2) - th(3)) * fs2;
    out(r, n - 1) = (2.0 * th(n - 1) - 5.0 * th(n - 2) + 4.0 * th(n - 3) - th(n - 4)) * fs2;
  }
  return out;
}

}  // namespace emg2kin::dsp

#endif  // EMG2KIN_DSP_HPP
