// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#include "emg2kin/dsp.hpp"
#include "emg2kin/metrics.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace emg2kin::dsp {
namespace {

using std::numbers::pi;

TEST(Butterworth, HalfPowerAtCutoff) {
  const auto c = butterworth_lowpass(2, 5.0, 100.0);
  EXPECT_NEAR(std::abs(c.response(5.0)), 1.0 / std::sqrt(2.0), 1e-6);
}

TEST(Butterworth, UnitDcGain) {
  const auto c = butterworth_lowpass(2, 3.0, 1000.0);
  EXPECT_NEAR(c.dc_gain(), 1.0, 1e-9);
}

// Closed-form second-order section from the bilinear transform with
// prewarping, derived independently of the pole-placement code path.
TEST(Butterworth, MatchesTextbookBiquad) {
  const double fc = 5.0, fs = 100.0;
  const double k = std::tan(pi * fc / fs);
  const double norm = 1.0 / (1.0 + std::sqrt(2.0) * k + k * k);
  const double b0 = k * k * norm;
  const double a1 = 2.0 * (k * k - 1.0) * norm;
  const double a2 = (1.0 - std::sqrt(2.0) * k + k * k) * norm;

  const auto c = butterworth_lowpass(2, fc, fs);
  ASSERT_EQ(c.numerator.size(), 3u);
  EXPECT_NEAR(c.numerator[0], b0, 1e-12);
  EXPECT_NEAR(c.numerator[1], 2.0 * b0, 1e-12);
  EXPECT_NEAR(c.numerator[2], b0, 1e-12);
  EXPECT_NEAR(c.denominator[0], 1.0, 1e-15);
  EXPECT_NEAR(c.denominator[1], a1, 1e-12);
  EXPECT_NEAR(c.denominator[2], a2, 1e-12);
}

TEST(Butterworth, StableUnitGainHalfPowerAcrossOrders) {
  for (int order = 1; order <= 6; ++order) {
    for (double fc : {1.0, 3.0, 5.0, 20.0, 45.0}) {
      const auto c = butterworth_lowpass(order, fc, 100.0);
      EXPECT_NEAR(c.dc_gain(), 1.0, 1e-9) << order << " " << fc;
      EXPECT_NEAR(std::abs(c.response(fc)), 1.0 / std::sqrt(2.0), 1e-6) << order << " " << fc;
      for (const auto& p : c.poles()) EXPECT_LT(std::abs(p), 1.0) << order << " " << fc;
    }
  }
}

TEST(Butterworth, RejectsCutoffOutsideNyquist) {
  EXPECT_THROW(butterworth_lowpass(2, 50.0, 100.0), Error);
  EXPECT_THROW(butterworth_lowpass(2, 0.0, 100.0), Error);
  try {
    butterworth_lowpass(2, 80.0, 100.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CutoffOutOfRange);
  }
}

TEST(ZeroPhase, TriangularPulseKeepsPeakIndex) {
  const auto c = butterworth_lowpass(2, 5.0, 100.0);
  for (std::size_t center : {60u, 100u, 137u}) {
    std::vector<double> x(300, 0.0);
    for (int k = -15; k <= 15; ++k) x[center + k] = 15.0 - std::abs(k);
    const auto y = zero_phase_filter(c, x);
    const auto peak = std::max_element(y.begin(), y.end()) - y.begin();
    EXPECT_EQ(static_cast<std::size_t>(peak), center);
  }
}

TEST(ZeroPhase, ConstantPassesUnchanged) {
  const auto c = butterworth_lowpass(2, 3.0, 1000.0);
  const std::vector<double> x(500, 2.75);
  for (double v : zero_phase_filter(c, x)) EXPECT_NEAR(v, 2.75, 1e-9);
}

TEST(ZeroPhase, Linear) {
  const auto c = butterworth_lowpass(2, 5.0, 100.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = testing::random_vector(400, seed);
    const auto y = testing::random_vector(400, seed + 100);
    const double a = 1.7, b = -0.3;
    std::vector<double> mix(400);
    for (std::size_t i = 0; i < 400; ++i) mix[i] = a * x[i] + b * y[i];
    const auto fx = zero_phase_filter(c, x), fy = zero_phase_filter(c, y), fm = zero_phase_filter(c, mix);
    for (std::size_t i = 0; i < 400; ++i) EXPECT_NEAR(fm[i], a * fx[i] + b * fy[i], 1e-9);
  }
}

TEST(ZeroPhase, RejectsShortSignal) {
  const auto c = butterworth_lowpass(2, 5.0, 100.0);
  const std::vector<double> x(6, 1.0);
  try {
    zero_phase_filter(c, x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SignalTooShort);
  }
  EXPECT_NO_THROW(zero_phase_filter(c, std::vector<double>(7, 1.0)));
}

// Band-averaged output/input power ratio of filtered white noise against the
// squared magnitude of the effective (forward-backward) response |H|^2.
TEST(ZeroPhase, WhiteNoiseSpectrumFollowsSquaredMagnitude) {
  const double fs = 100.0, fc = 5.0;
  const auto c = butterworth_lowpass(2, fc, fs);
  const std::size_t n = 1 << 15;
  const auto x = testing::random_vector(n, 42);
  const auto y = zero_phase_filter(c, x);
  const auto px = testing::periodogram(x), py = testing::periodogram(y);
  for (double lo = 0.5; lo < fc; lo += 0.5) {
    double out = 0, expected = 0;
    for (std::size_t k = 1; k < px.size(); ++k) {
      const double f = static_cast<double>(k) * fs / static_cast<double>(n);
      if (f < lo || f >= lo + 0.5) continue;
      const double h2 = std::norm(c.response(f));
      out += py[k];
      expected += px[k] * h2 * h2;  // power ratio of |H|^2 in magnitude
    }
    EXPECT_NEAR(std::sqrt(out / expected), 1.0, 0.05) << "band starting at " << lo << " Hz";
  }
}

TEST(ZeroPhase, EvenReflectionKeepsConstantAndPeak) {
  const auto c = butterworth_lowpass(2, 5.0, 100.0);
  for (double v : zero_phase_filter(c, std::vector<double>(200, -1.5), EdgeReflection::even)) EXPECT_NEAR(v, -1.5, 1e-9);
  std::vector<double> x(300, 0.0);
  for (int k = -15; k <= 15; ++k) x[150 + k] = 15.0 - std::abs(k);
  const auto y = zero_phase_filter(c, x, EdgeReflection::even);
  EXPECT_EQ(std::max_element(y.begin(), y.end()) - y.begin(), 150);
}

TEST(ZeroPhase, PaddingCoversThreeCutoffPeriods) {
  const auto c = butterworth_lowpass(2, 5.0, 100.0);
  EXPECT_EQ(zero_phase_padding(c, 1000), 60u);
  EXPECT_EQ(zero_phase_padding(c, 20), 19u);
  EXPECT_EQ(zero_phase_padding(c, 7), 6u);
}

TEST(Rectify, AbsoluteValue) {
  const std::vector<double> x{-1.0, 2.0, -3.0};
  EXPECT_EQ(rectify(x), (std::vector<double>{1.0, 2.0, 3.0}));
  const std::vector<double> pos{0.0, 0.5, 4.0};
  EXPECT_EQ(rectify(pos), pos);
}

TEST(Rectify, EvenSymmetry) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto x = testing::random_vector(64, seed);
    auto neg = x;
    for (double& v : neg) v = -v;
    EXPECT_EQ(rectify(x), rectify(neg));
  }
}

TEST(Decimate, KeepsEveryFactorthSample) {
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const auto y = decimate(x, 10);
  ASSERT_EQ(y.size(), 100u);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], static_cast<double>(10 * i));
  EXPECT_EQ(decimate(x, 1), x);
  EXPECT_EQ(decimate(std::vector<double>(1001, 0.0), 10).size(), 101u);
  EXPECT_THROW(decimate(x, 0), Error);
}

TEST(Decimate, LowpassedSignalMatchesDenseAtKeptIndices) {
  const auto c = butterworth_lowpass(2, 3.0, 1000.0);
  const auto dense = zero_phase_filter(c, rectify(testing::random_vector(2000, 3)));
  const auto kept = decimate(dense, 10);
  for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(kept[i], dense[10 * i]);
}

TEST(DifferentiateTwice, ConstantGivesZero) {
  const Matrix th = Matrix::Constant(18, 50, 12.5);
  EXPECT_EQ(differentiate_twice(th, 100.0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DifferentiateTwice, AffineIsAnnihilated) {
  Matrix th(2, 40);
  for (int t = 0; t < 40; ++t) {
    th(0, t) = 3.0 + 2.0 * t;    // exactly representable
    th(1, t) = -1.25 + 0.5 * t;
  }
  EXPECT_EQ(differentiate_twice(th, 100.0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DifferentiateTwice, ExactOnQuadratics) {
  const double fs = 100.0;
  Matrix th(1, 60);
  for (int t = 0; t < 60; ++t) {
    const double time = t / fs;
    th(0, t) = 0.5 * time * time;
  }
  const Matrix a = differentiate_twice(th, fs);
  for (int t = 0; t < 60; ++t) EXPECT_NEAR(a(0, t), 1.0, 1e-9) << t;
}

TEST(DifferentiateTwice, SineAgainstAnalyticDerivative) {
  const double fs = 100.0, f = 1.0, w = 2.0 * pi * f;
  Matrix th(1, 250);
  for (int t = 0; t < 250; ++t) th(0, t) = std::sin(w * t / fs);
  const Matrix a = differentiate_twice(th, fs);
  const double amplitude = w * w;
  for (int t = 0; t < 250; ++t) EXPECT_LT(std::abs(a(0, t) + amplitude * std::sin(w * t / fs)), 1e-3 * amplitude) << t;
}

TEST(DifferentiateTwice, RejectsShortInput) {
  EXPECT_THROW(differentiate_twice(Matrix::Zero(18, 4), 100.0), Error);
}

TEST(KinematicChain, LowpassThenDifferentiatePreservesSine) {
  const double fs = 100.0, w = 2.0 * pi;
  const auto lp = butterworth_lowpass(2, 5.0, fs);
  Matrix th(1, 600);
  std::vector<double> truth(600);
  for (int t = 0; t < 600; ++t) {
    th(0, t) = std::sin(w * t / fs);
    truth[t] = -w * w * std::sin(w * t / fs);
  }
  const Matrix a = differentiate_twice(zero_phase_filter_rows(lp, th), fs);
  const auto est = metrics::column(a.transpose(), 0);
  EXPECT_GE(metrics::pearson(est, truth), 0.999);
}

}  // namespace
}  // namespace emg2kin::dsp
