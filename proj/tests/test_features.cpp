// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#include "emg2kin/features.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace emg2kin::features {
namespace {

using std::numbers::pi;

Matrix sine_emg(Eigen::Index n, double freq, double amp, int channels = kEmgChannels) {
  Matrix m(channels, n);
  for (int c = 0; c < channels; ++c)
    for (Eigen::Index t = 0; t < n; ++t) m(c, t) = amp * std::sin(2 * pi * freq * t / 1000.0 + 0.3 * c);
  return m;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no emg2kin::Error thrown";
  return ErrorCode::Io;
}

// ---------------------------------------------------------------- envelope

TEST(Envelope, RectifiedSineMean) {
  const double amp = 0.8;
  const Matrix env = compute_envelope(sine_emg(4000, 100.0, amp));
  EXPECT_EQ(env.rows(), 7);
  EXPECT_EQ(env.cols(), 400);
  const double expected = 2.0 * amp / pi;
  for (int c = 0; c < 7; ++c)
    for (Eigen::Index t = 0; t < env.cols(); ++t) ASSERT_NEAR(env(c, t), expected, 0.05 * expected) << c << " " << t;
}

TEST(Envelope, ZeroInZeroOut) {
  EXPECT_EQ(compute_envelope(Matrix::Zero(7, 1000)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Envelope, AmplitudeModulatedBurstPeakTime) {
  for (double center_s : {0.8, 1.37, 2.05}) {
    Matrix emg(1, 3000);
    for (Eigen::Index t = 0; t < 3000; ++t) {
      const double z = (t / 1000.0 - center_s) / 0.15;
      emg(0, t) = std::exp(-0.5 * z * z) * std::sin(2 * pi * 150.0 * t / 1000.0);
    }
    const Matrix env = compute_envelope(emg);
    Eigen::Index arg = 0;
    env.row(0).maxCoeff(&arg);
    EXPECT_LE(std::abs(arg / 100.0 - center_s), 0.020) << center_s;
  }
}

TEST(Envelope, NonNegativeWithinRipple) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Matrix emg = testing::random_matrix(7, 3000, seed, 0.05);
    // Sparse bursts give the lowpass sharp edges to ring on.
    for (Eigen::Index t = 0; t < 3000; ++t)
      if ((t / 300) % 2) emg.col(t).setZero();
    const Matrix env = compute_envelope(emg);
    EXPECT_GE(env.minCoeff(), -1e-6 * env.maxCoeff());
  }
}

TEST(Envelope, TooShort) {
  EXPECT_EQ(code_of([] { compute_envelope(Matrix::Zero(7, 99)); }), ErrorCode::TooShort);
  EXPECT_NO_THROW(compute_envelope(Matrix::Zero(7, 100)));
}

// -------------------------------------------------------------- spectrogram

// I0 from its power series, independent of the std::cyl_bessel_i path.
double bessel_i0(double x) {
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < 60; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
  }
  return sum;
}

TEST(Spectrogram, KaiserWindowMatchesSeries) {
  const auto w = kaiser_window(50, 5.0);
  ASSERT_EQ(w.size(), 50u);
  for (int n = 0; n < 50; ++n) {
    const double r = 2.0 * n / 49.0 - 1.0;
    EXPECT_NEAR(w[n], bessel_i0(5.0 * std::sqrt(1 - r * r)) / bessel_i0(5.0), 1e-13);
    EXPECT_DOUBLE_EQ(w[n], w[49 - n]);
  }
  EXPECT_NEAR(w.front(), 1.0 / bessel_i0(5.0), 1e-14);
}

TEST(Spectrogram, EveryBandReceivesFftBins) {
  const SpectrogramConfig cfg;
  const auto band = spectrogram_band_map(cfg);
  std::vector<int> count(500, 0);
  int in_band = 0;
  for (std::size_t m = 0; m < band.size(); ++m)
    if (band[m] >= 0) {
      ++count[band[m]];
      ++in_band;
      const double f = m * 1000.0 / 2048.0;
      EXPECT_GE(f, 20.0);
      EXPECT_LE(f, 400.0);
    }
  EXPECT_GE(in_band, 778);
  for (int b = 0; b < 500; ++b) EXPECT_GE(count[b], 1) << b;
}

TEST(Spectrogram, ShapeAndChannelStacking) {
  Matrix emg = Matrix::Zero(7, 2000);
  emg.row(3) = sine_emg(2000, 100.0, 1.0, 1).row(0);
  const Matrix s = compute_spectrogram(emg);
  EXPECT_EQ(s.rows(), 3500);
  EXPECT_EQ(s.cols(), 200);
  for (int c = 0; c < 7; ++c) {
    const double energy = s.middleRows(c * 500, 500).cwiseAbs().sum();
    if (c == 3)
      EXPECT_GT(energy, 0.0);
    else
      EXPECT_EQ(energy, 0.0) << c;
  }
}

TEST(Spectrogram, SingleToneArgmaxInToneBin) {
  for (double tone : {100.0, 57.0, 233.0}) {
    const Matrix s = compute_spectrogram(sine_emg(3000, tone, 1.0));
    const int expected_bin = static_cast<int>(std::floor((tone - 20.0) / (380.0 / 500.0)));
    for (int c = 0; c < 7; ++c)
      for (Eigen::Index t = 0; t < s.cols(); ++t) {
        Eigen::Index arg = 0;
        s.col(t).segment(c * 500, 500).maxCoeff(&arg);
        // Band edges fall between FFT bins; allow the neighbour sharing the peak FFT bin.
        ASSERT_LE(std::abs(static_cast<int>(arg) - expected_bin), 1) << tone << " " << c << " " << t;
      }
  }
}

TEST(Spectrogram, SingleToneArgmaxExactAtBandCentre) {
  // 100 Hz lies inside band 105 and is itself an FFT bin centre-neighbour.
  const Matrix s = compute_spectrogram(sine_emg(3000, 100.0, 1.0));
  const auto band = spectrogram_band_map(SpectrogramConfig{});
  const int fft_bin = static_cast<int>(std::lround(100.0 * 2048 / 1000.0));
  for (Eigen::Index t = 0; t < s.cols(); ++t) {
    Eigen::Index arg = 0;
    s.col(t).head(500).maxCoeff(&arg);
    ASSERT_EQ(arg, band[fft_bin]) << t;
  }
}

TEST(Spectrogram, ZeroInZeroOut) {
  EXPECT_EQ(compute_spectrogram(Matrix::Zero(7, 500)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Spectrogram, WhiteNoiseIsFlat) {
  const Matrix emg = testing::random_matrix(7, 5000, 17);  // 100 frames
  const Matrix s = compute_spectrogram(emg);
  for (int c = 0; c < 7; ++c) {
    const Vector avg = s.middleRows(c * 500, 500).rowwise().mean();
    EXPECT_LE(avg.maxCoeff() / avg.minCoeff(), 3.0) << c;
  }
}

TEST(Spectrogram, TooShort) {
  EXPECT_EQ(code_of([] { compute_spectrogram(Matrix::Zero(7, 49)); }), ErrorCode::TooShort);
}

// Column t interpolates frames whose windows end no later than sample 10t+75.
TEST(Spectrogram, DependsOnlyOnSamplesUpToInterpolationReach) {
  const Matrix base = testing::random_matrix(7, 2000, 3);
  const Matrix s0 = compute_spectrogram(base);
  for (Eigen::Index cut : {300, 777, 1234}) {
    Matrix perturbed = base;
    perturbed.rightCols(2000 - cut) += testing::random_matrix(7, 2000 - cut, 4);
    const Matrix s1 = compute_spectrogram(perturbed);
    for (Eigen::Index t = 0; t < s0.cols() && 10 * t + 75 < cut; ++t)
      ASSERT_TRUE(s0.col(t) == s1.col(t)) << cut << " " << t;
    // The bound is tight: some column within reach of the cut does change.
    const Eigen::Index t_edge = (cut - 75 + 9) / 10;
    bool changed = false;
    for (Eigen::Index t = t_edge; t < t_edge + 6 && t < s0.cols(); ++t) changed |= !(s0.col(t) == s1.col(t));
    EXPECT_TRUE(changed) << cut;
  }
}

TEST(EnvelopeCausality, ZeroPhaseEnvelopeLooksAhead) {
  // The zero-phase envelope is not causal; its dependence on later samples
  // decays with distance.
  const Matrix base = testing::random_matrix(1, 4000, 8);
  Matrix late = base;
  late(0, 3000) += 50.0;
  const Matrix e0 = compute_envelope(base), e1 = compute_envelope(late);
  const double near = std::abs(e1(0, 290) - e0(0, 290));
  const double far = std::abs(e1(0, 100) - e0(0, 100));
  EXPECT_GT(near, 0.0);
  EXPECT_LT(far, 1e-3 * near);
}

// ---------------------------------------------------------------------- PCA

TEST(Pca, ExactSubspaceRetainsEverything) {
  const Matrix basis = testing::random_matrix(10, 60, 1);
  const Matrix coeffs = testing::random_matrix(400, 10, 2);
  const Matrix x = (coeffs * basis).rowwise() + testing::random_matrix(1, 60, 3).row(0);
  const PcaModel m = fit_pca(x, 25);
  EXPECT_NEAR(m.retained_fraction(), 1.0, 1e-9);
  EXPECT_TRUE(m.rank_deficient);
  const Matrix nonzero = m.components.topRows(10);
  EXPECT_LT((nonzero * nonzero.transpose() - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_EQ(m.components.bottomRows(15).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Pca, OrthonormalDescendingAndCanonicalSign) {
  const Matrix x = testing::random_matrix(500, 80, 4) * testing::random_matrix(80, 80, 5);
  const PcaModel m = fit_pca(x, 25);
  EXPECT_FALSE(m.rank_deficient);
  EXPECT_LT((m.components * m.components.transpose() - Matrix::Identity(25, 25)).cwiseAbs().maxCoeff(), 1e-8);
  for (int i = 1; i < 25; ++i) EXPECT_GE(m.explained_variance(i - 1), m.explained_variance(i));
  for (int i = 0; i < 25; ++i) {
    Eigen::Index arg = 0;
    m.components.row(i).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(m.components(i, arg), 0.0);
  }
}

// Rows +-c*e_i have exactly isotropic population covariance c^2/D * I.
TEST(Pca, ExactlyIsotropicDesignAtFullWidth) {
  const Eigen::Index d = kEmgFeatureDim;
  Matrix x = Matrix::Zero(2 * d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    x(2 * i, i) = 3.0;
    x(2 * i + 1, i) = -3.0;
  }
  const PcaModel m = fit_pca(x, 25);
  const double expected = 25.0 / static_cast<double>(d);
  EXPECT_NEAR(m.retained_fraction(), expected, 0.2 * expected);
  EXPECT_LT((m.components * m.components.transpose() - Matrix::Identity(25, 25)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Pca, IsotropicGaussianSample) {
  const Matrix x = testing::random_matrix(50000, 50, 6);
  const PcaModel m = fit_pca(x, 5);
  const double expected = 5.0 / 50.0;
  EXPECT_NEAR(m.retained_fraction(), expected, 0.2 * expected);
}

Matrix low_rank_plus_noise(Eigen::Index n, Eigen::Index d, Eigen::Index r, std::uint64_t seed) {
  Matrix scales = Matrix::Zero(r, r);
  for (Eigen::Index i = 0; i < r; ++i) scales(i, i) = 10.0 / (1.0 + i);
  return testing::random_matrix(n, r, seed) * scales * testing::random_matrix(r, d, seed + 1) +
         testing::random_matrix(n, d, seed + 2, 0.05);
}

void expect_reconstruction_matches_discarded(const Matrix& x, const PcaModel& m) {
  const Matrix rec = m.reconstruct(m.project(x));
  const double mse = (x - rec).rowwise().squaredNorm().mean();
  const double discarded = m.total_variance - m.explained_variance.sum();
  EXPECT_NEAR(mse, discarded, 1e-6 * discarded);
}

TEST(Pca, ReconstructionErrorEqualsDiscardedVariance) {
  const Matrix x = low_rank_plus_noise(600, 120, 30, 7);
  expect_reconstruction_matches_discarded(x, fit_pca(x, 25));
}

TEST(Pca, IterativeSolverAgreesWithDense) {
  const Matrix x = low_rank_plus_noise(1500, 700, 40, 9);
  PcaOptions iterative;  // D = 700 is above the dense threshold
  const PcaModel a = fit_pca(x, 25, iterative);
  PcaOptions dense;
  dense.dense_threshold = 10000;
  const PcaModel b = fit_pca(x, 25, dense);
  for (int i = 0; i < 25; ++i) EXPECT_NEAR(a.explained_variance(i), b.explained_variance(i), 1e-8 * b.explained_variance(0));
  EXPECT_LT((a.components - b.components).cwiseAbs().maxCoeff(), 1e-6);
  expect_reconstruction_matches_discarded(x, a);
}

TEST(Pca, ProjectionsAreDecorrelated) {
  const Matrix x = low_rank_plus_noise(800, 90, 35, 11);
  const PcaModel m = fit_pca(x, 25);
  const Matrix s = m.project(x);
  const Matrix centered = s.rowwise() - s.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(s.rows());
  for (int i = 0; i < 25; ++i)
    for (int j = 0; j < 25; ++j)
      if (i != j) {
        EXPECT_LT(std::abs(cov(i, j)), 1e-6 * cov(0, 0)) << i << " " << j;
      }
}

TEST(Pca, TestRowsDoNotInfluenceTrainFit) {
  const Matrix train = low_rank_plus_noise(300, 40, 10, 13);
  const Matrix test = low_rank_plus_noise(100, 40, 10, 14).array() + 2.0;
  const PcaModel a = fit_pca(train, 5), b = fit_pca(train, 5);
  EXPECT_TRUE(a.project(test) == b.project(test));
  Matrix both(400, 40);
  both << train, test;
  const PcaModel leaky = fit_pca(both, 5);
  EXPECT_GT((leaky.project(test) - a.project(test)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Pca, JsonRoundTripIsBitExact) {
  const Matrix x = low_rank_plus_noise(200, 30, 8, 15);
  const PcaModel m = fit_pca(x, 25);
  const auto text = to_json(m).dump();
  const PcaModel back = pca_from_json(nlohmann::json::parse(text));
  EXPECT_TRUE(back.mean == m.mean);
  EXPECT_TRUE(back.components == m.components);
  EXPECT_TRUE(back.explained_variance == m.explained_variance);
  EXPECT_EQ(back.total_variance, m.total_variance);
  EXPECT_EQ(back.rank_deficient, m.rank_deficient);
}

TEST(Pca, RejectsWrongSchema) {
  auto j = to_json(fit_pca(testing::random_matrix(30, 5, 1), 2));
  j["version"] = 2;
  EXPECT_EQ(code_of([&] { pca_from_json(j); }), ErrorCode::Parse);
  j["version"] = 1;
  j["kind"] = "zscore";
  EXPECT_EQ(code_of([&] { pca_from_json(j); }), ErrorCode::Parse);
}

// ------------------------------------------------------------------ z-score

TEST(ZScore, ConstantColumnBecomesZero) {
  Matrix x = testing::random_matrix(50, 3, 1);
  x.col(1).setConstant(4.5);
  const ZScoreModel m = fit_zscore(x);
  EXPECT_EQ(m.std(1), kStdFloor);
  const Matrix z = m.apply(x);
  EXPECT_EQ(z.col(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ZScore, StandardNormalSampling) {
  const Eigen::Index n = 4000;
  const ZScoreModel m = fit_zscore(testing::random_matrix(n, 1, 2));
  const double tol = 3.0 / std::sqrt(static_cast<double>(n));
  EXPECT_NEAR(m.mean(0), 0.0, tol);
  EXPECT_NEAR(m.std(0), 1.0, tol);
}

TEST(ZScore, TransformedTrainingColumnsAreStandard) {
  Matrix x = testing::random_matrix(1000, 43, 3, 7.0);
  x.array() += 1e4;  // large offset stresses the mean computation
  const Matrix z = apply_zscore(fit_zscore(x), x);
  for (int c = 0; c < 43; ++c) {
    const double mean = z.col(c).mean();
    const double sd = std::sqrt((z.col(c).array() - mean).square().mean());
    EXPECT_LT(std::abs(mean), 1e-9);
    EXPECT_NEAR(sd, 1.0, 1e-6);
  }
}

TEST(ZScore, StdIsAlwaysPositive) {
  Matrix x = Matrix::Zero(10, 4);
  x(3, 2) = 1e-300;
  for (double s : fit_zscore(x).std) EXPECT_GE(s, kStdFloor);
}

TEST(ZScore, JsonRoundTripIsBitExact) {
  const ZScoreModel m = fit_zscore(testing::random_matrix(100, 43, 4));
  const ZScoreModel back = zscore_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_TRUE(back.mean == m.mean);
  EXPECT_TRUE(back.std == m.std);
}

// ----------------------------------------------------------------- assembly

struct AssemblyFixture : ::testing::Test {
  Eigen::Index t_len = 10;
  Matrix env = testing::random_matrix(7, 10, 1);
  Matrix spec = testing::random_matrix(3500, 10, 2);
  Matrix accel = testing::random_matrix(10, 18, 3);
  PcaModel pca;

  void SetUp() override {
    pca.mean = Vector::Zero(kEmgFeatureDim);
    pca.components = Matrix::Zero(25, kEmgFeatureDim);
    for (int i = 0; i < 25; ++i) pca.components(i, i * 100) = 1.0;
    pca.explained_variance = Vector::Ones(25);
    pca.total_variance = 25.0;
  }
};

TEST_F(AssemblyFixture, LagThreeZeroPadsFirstRows) {
  const auto seq = assemble_features(env, spec, pca, accel, 3);
  ASSERT_EQ(seq.features.rows(), 10);
  ASSERT_EQ(seq.features.cols(), 43);
  for (int t = 0; t < 3; ++t) EXPECT_EQ(seq.features.block(t, 25, 1, 18).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(seq.features.block(5, 25, 1, 18) == accel.row(2));
  for (Eigen::Index t = 3; t < 10; ++t) EXPECT_TRUE(seq.features.block(t, 25, 1, 18) == accel.row(t - 3));
  EXPECT_TRUE(seq.targets == accel);
}

TEST_F(AssemblyFixture, LagZeroCopiesTarget) {
  const auto seq = assemble_features(env, spec, pca, accel, 0);
  EXPECT_TRUE(seq.features.rightCols(18) == seq.targets);
}

TEST_F(AssemblyFixture, EmgColumnsAreProjections) {
  const auto seq = assemble_features(env, spec, pca, accel);
  for (Eigen::Index t = 0; t < 10; ++t)
    for (int i = 0; i < 25; ++i) {
      const int d = i * 100;
      const double expected = d < 7 ? env(d, t) : spec(d - 7, t);
      EXPECT_EQ(seq.features(t, i), expected);
    }
}

TEST_F(AssemblyFixture, LengthMismatch) {
  EXPECT_EQ(code_of([&] { assemble_features(env, spec, pca, accel.topRows(9)); }), ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([&] { assemble_features(env.leftCols(9), spec, pca, accel); }), ErrorCode::LengthMismatch);
}

TEST_F(AssemblyFixture, KinematicColumnsIgnoreFutureAccelerations) {
  const auto a = assemble_features(env, spec, pca, accel);
  Matrix later = accel;
  later.bottomRows(4).array() += 100.0;  // rows 6..9
  const auto b = assemble_features(env, spec, pca, later);
  for (Eigen::Index t = 0; t < 9; ++t)  // row t reads accel t-3 <= 5
    EXPECT_TRUE(a.features.row(t) == b.features.row(t)) << t;
}

}  // namespace
}  // namespace emg2kin::features
