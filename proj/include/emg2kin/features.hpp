// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_FEATURES_HPP
#define EMG2KIN_FEATURES_HPP

#include "emg2kin/common.hpp"
#include "emg2kin/dsp.hpp"

#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>
#include <vector>

namespace emg2kin::features {

inline constexpr int kPcaComponents = 25;
inline constexpr int kSpectrogramBins = 500;
inline constexpr int kSpectrogramRows = kEmgChannels * kSpectrogramBins;  // 3500
inline constexpr int kEmgFeatureDim = kEmgChannels + kSpectrogramRows;     // 3507
inline constexpr int kFeatureDim = kPcaComponents + kJoints;               // 43
inline constexpr int kDefaultLag = 3;

struct EnvelopeConfig {
  int filter_order = 2;
  double cutoff_hz = 3.0;
};

/// Rectify, 3 Hz zero-phase lowpass, keep every tenth sample.
/// [7 x N_e] @ 1 kHz -> [7 x ceil(N_e/10)] @ 100 Hz.
/// The rectified signal is reflected evenly at the edges, and the filter's
/// undershoot after sharp offsets is clipped at zero.
inline Matrix compute_envelope(const Matrix& emg, const EnvelopeConfig& cfg = {}) {
  emg2kin::detail::require(emg.cols() >= 100, ErrorCode::TooShort, "envelope needs at least 100 EMG samples");
  const auto lp = dsp::butterworth_lowpass(cfg.filter_order, cfg.cutoff_hz, kEmgRateHz);
  const Eigen::Index n_out = (emg.cols() + kRateRatio - 1) / kRateRatio;
  Matrix out(emg.rows(), n_out);
  std::vector<double> row(static_cast<std::size_t>(emg.cols()));
  for (Eigen::Index c = 0; c < emg.rows(); ++c) {
    for (Eigen::Index t = 0; t < emg.cols(); ++t) row[t] = emg(c, t);
    const auto env =
        dsp::decimate(dsp::zero_phase_filter(lp, dsp::rectify(row), dsp::EdgeReflection::even), kRateRatio);
    for (Eigen::Index t = 0; t < n_out; ++t) out(c, t) = std::max(0.0, env[static_cast<std::size_t>(t)]);
  }
  return out;
}

struct SpectrogramConfig {
  int window = 50;  // samples at 1 kHz
  int hop = 50;
  int fft_size = 2048;
  double kaiser_beta = 5.0;
  double f_low_hz = 20.0;
  double f_high_hz = 400.0;
  int bins = kSpectrogramBins;
};

inline std::vector<double> kaiser_window(int length, double beta) {
  std::vector<double> w(static_cast<std::size_t>(length));
  const double denom = std::cyl_bessel_i(0.0, beta);
  for (int n = 0; n < length; ++n) {
    // Integer numerator keeps w[n] == w[length-1-n] exactly.
    const double r = length > 1 ? static_cast<double>(2 * n - (length - 1)) / (length - 1) : 0.0;
    w[n] = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

/// Band index of each FFT bin, or -1 when the bin lies outside the band.
inline std::vector<int> spectrogram_band_map(const SpectrogramConfig& cfg) {
  std::vector<int> band(static_cast<std::size_t>(cfg.fft_size / 2 + 1), -1);
  const double df = kEmgRateHz / cfg.fft_size;
  const double width = (cfg.f_high_hz - cfg.f_low_hz) / cfg.bins;
  for (std::size_t m = 0; m < band.size(); ++m) {
    const double f = static_cast<double>(m) * df;
    if (f < cfg.f_low_hz || f > cfg.f_high_hz) continue;
    band[m] = std::min(cfg.bins - 1, static_cast<int>(std::floor((f - cfg.f_low_hz) / width)));
  }
  return band;
}

/// Short-time Fourier magnitudes of each channel on non-overlapping Kaiser
/// windows, averaged into uniform bands over [f_low, f_high] and linearly
/// interpolated from the frame rate onto the 100 Hz grid. Rows are
/// channel-major: row c*bins + b is band b of channel c.
inline Matrix compute_spectrogram(const Matrix& emg, const SpectrogramConfig& cfg = {}) {
  emg2kin::detail::require(emg.cols() >= cfg.window, ErrorCode::TooShort,
                           "spectrogram needs at least one full window of EMG");
  const Eigen::Index n_out = (emg.cols() + kRateRatio - 1) / kRateRatio;
  const Eigen::Index n_frames = (emg.cols() - cfg.window) / cfg.hop + 1;
  const auto window = kaiser_window(cfg.window, cfg.kaiser_beta);
  const auto band = spectrogram_band_map(cfg);
  std::vector<int> band_count(static_cast<std::size_t>(cfg.bins), 0);
  for (int b : band)
    if (b >= 0) ++band_count[b];

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<std::size_t>(cfg.fft_size));
  std::vector<std::complex<double>> spectrum;
  Matrix out(emg.rows() * cfg.bins, n_out);
  Matrix frames(cfg.bins, n_frames);

  for (Eigen::Index c = 0; c < emg.rows(); ++c) {
    for (Eigen::Index f = 0; f < n_frames; ++f) {
      std::fill(frame.begin(), frame.end(), 0.0);
      const Eigen::Index start = f * cfg.hop;
      for (int n = 0; n < cfg.window; ++n) frame[n] = window[n] * emg(c, start + n);
      fft.fwd(spectrum, frame);
      frames.col(f).setZero();
      for (std::size_t m = 0; m < band.size(); ++m)
        if (band[m] >= 0) frames(band[m], f) += std::abs(spectrum[m]);
      for (int b = 0; b < cfg.bins; ++b) frames(b, f) /= band_count[b];
    }
    // Frame f is centred at sample f*hop + (window-1)/2 of the 1 kHz stream.
    for (Eigen::Index t = 0; t < n_out; ++t) {
      const double pos =
          (static_cast<double>(t * kRateRatio) - 0.5 * (cfg.window - 1)) / static_cast<double>(cfg.hop);
      Eigen::Index f0 = static_cast<Eigen::Index>(std::floor(pos));
      double w1 = pos - static_cast<double>(f0);
      if (f0 < 0) {
        f0 = 0;
        w1 = 0.0;
      } else if (f0 >= n_frames - 1) {
        f0 = n_frames - 1;
        w1 = 0.0;
      }
      const Eigen::Index f1 = std::min<Eigen::Index>(f0 + 1, n_frames - 1);
      out.block(c * cfg.bins, t, cfg.bins, 1) = (1.0 - w1) * frames.col(f0) + w1 * frames.col(f1);
    }
  }
  return out;
}

/// Stacks [envelope ; spectrogram] into rows of the EMG feature matrix
/// [T x 3507].
inline Matrix emg_feature_rows(const Matrix& envelope, const Matrix& spectrogram) {
  emg2kin::detail::require(envelope.cols() == spectrogram.cols(), ErrorCode::LengthMismatch,
                           "envelope and spectrogram lengths differ");
  Matrix rows(envelope.cols(), envelope.rows() + spectrogram.rows());
  rows.leftCols(envelope.rows()) = envelope.transpose();
  rows.rightCols(spectrogram.rows()) = spectrogram.transpose();
  return rows;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Vector mean;
  Matrix components;  // [k x D], orthonormal rows
  Vector explained_variance;
  double total_variance = 0.0;
  bool rank_deficient = false;

  double retained_fraction() const {
    return total_variance > 0 ? explained_variance.sum() / total_variance : 1.0;
  }

  /// Projects the rows of X [N x D] -> [N x k].
  Matrix project(const Matrix& x) const {
    return (x.rowwise() - mean.transpose()) * components.transpose();
  }

  Matrix reconstruct(const Matrix& scores) const {
    return (scores * components).rowwise() + mean.transpose();
  }
};

struct PcaOptions {
  int max_iterations = 500;
  double tolerance = 1e-12;
  int oversampling = 15;
  Eigen::Index dense_threshold = 600;  // full eigendecomposition below this D
  std::uint64_t seed = 0x5043415F;
};

namespace detail {

// Top eigenpairs of a symmetric PSD matrix by block subspace iteration with a
// Rayleigh-Ritz step per sweep. Returns (values descending, vectors as columns).
inline std::pair<Vector, Matrix> top_eigenpairs(const Matrix& cov, int k, const PcaOptions& opt) {
  const Eigen::Index d = cov.rows();
  if (d <= opt.dense_threshold) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    Vector vals = es.eigenvalues().reverse();
    Matrix vecs = es.eigenvectors().rowwise().reverse();
    return {vals.head(k), vecs.leftCols(k)};
  }
  const Eigen::Index p = std::min<Eigen::Index>(d, k + opt.oversampling);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix q(d, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < d; ++i) q(i, j) = normal(rng);
  q = Eigen::HouseholderQR<Matrix>(q).householderQ() * Matrix::Identity(d, p);

  Vector ritz_prev = Vector::Zero(k);
  Vector ritz_vals;
  Matrix ritz_vecs;
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Matrix z = cov.selfadjointView<Eigen::Lower>() * q;
    q = Eigen::HouseholderQR<Matrix>(z).householderQ() * Matrix::Identity(d, p);
    const Matrix small = q.transpose() * (cov.selfadjointView<Eigen::Lower>() * q);
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (small + small.transpose()));
    ritz_vals = es.eigenvalues().reverse();
    ritz_vecs = es.eigenvectors().rowwise().reverse();
    q = q * ritz_vecs;
    const double scale = std::max(std::abs(ritz_vals(0)), 1e-300);
    const double change = (ritz_vals.head(k) - ritz_prev).cwiseAbs().maxCoeff() / scale;
    ritz_prev = ritz_vals.head(k);
    if (it > 2 && change < opt.tolerance) break;
  }
  return {ritz_vals.head(k), q.leftCols(k)};
}

}  // namespace detail

/// PCA of the rows of X (population covariance). Components with zero
/// variance are replaced by zero rows and the model is flagged rank-deficient.
inline PcaModel fit_pca(const Matrix& x, int n_components = kPcaComponents, const PcaOptions& opt = {}) {
  const Eigen::Index n = x.rows(), d = x.cols();
  emg2kin::detail::require(n_components >= 1 && n_components <= d, ErrorCode::InvalidConfig,
                           "n_components must lie in [1, D]");
  emg2kin::detail::require(n >= n_components, ErrorCode::TooShort, "PCA needs at least n_components rows");
  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - model.mean.transpose();
  Matrix cov = Matrix::Zero(d, d);
  cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / static_cast<double>(n));
  cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
  model.total_variance = cov.trace();

  auto [vals, vecs] = detail::top_eigenpairs(cov, n_components, opt);
  model.components = vecs.transpose();
  model.explained_variance = vals;
  const double floor = 1e-10 * std::max(model.total_variance, 1e-300);
  int rank = 0;
  for (int i = 0; i < n_components; ++i) {
    if (vals(i) > floor) {
      ++rank;
      continue;
    }
    model.components.row(i).setZero();
    model.explained_variance(i) = 0.0;
  }
  if (rank < n_components) {
    model.rank_deficient = true;
    std::cerr << "warning: " << to_string(ErrorCode::RankDeficient) << ": only " << rank << " of " << n_components
              << " principal components carry variance; padding with zero components\n";
  }
  // Canonical sign: largest-magnitude loading positive.
  for (int i = 0; i < n_components; ++i) {
    Eigen::Index arg = 0;
    model.components.row(i).cwiseAbs().maxCoeff(&arg);
    if (model.components(i, arg) < 0) model.components.row(i) *= -1.0;
  }
  return model;
}

// ---------------------------------------------------------------------------
// z-scoring

inline constexpr double kStdFloor = 1e-8;

struct ZScoreModel {
  Vector mean;
  Vector std;

  Matrix apply(const Matrix& x) const {
    emg2kin::detail::require(x.cols() == mean.size(), ErrorCode::ShapeMismatch, "z-score width mismatch");
    return (x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
  }
};

inline ZScoreModel fit_zscore(const Matrix& x) {
  emg2kin::detail::require(x.rows() >= 1, ErrorCode::EmptyDataset, "z-score needs at least one row");
  ZScoreModel m;
  m.mean.resize(x.cols());
  m.std.resize(x.cols());
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const auto col = x.col(c);
    if (col.maxCoeff() == col.minCoeff()) {
      m.mean(c) = col(0);
      m.std(c) = kStdFloor;
      continue;
    }
    double mu = col.sum() / n;
    mu += (col.array() - mu).sum() / n;  // second-pass correction
    const double var = (col.array() - mu).square().sum() / n;
    m.mean(c) = mu;
    m.std(c) = std::max(std::sqrt(var), kStdFloor);
  }
  return m;
}

inline Matrix apply_zscore(const ZScoreModel& model, const Matrix& x) { return model.apply(x); }

// ---------------------------------------------------------------------------
// Feature assembly

/// Per-timestep network inputs and targets of one task. Columns 0..24 are
/// EMG principal components, 25..42 the accelerations observed `lag`
/// samples earlier; targets are the accelerations at the same timestep.
struct FeatureSequence {
  Matrix features;  // [T x 43]
  Matrix targets;   // [T x 18], deg/s^2
  int participant_id = 0;
  int task_id = 0;
  int lag = kDefaultLag;

  Eigen::Index length() const { return features.rows(); }
};

inline FeatureSequence assemble_features(const Matrix& envelope, const Matrix& spectrogram, const PcaModel& pca,
                                         const Matrix& accel, int lag_samples = kDefaultLag) {
  const Eigen::Index t_len = accel.rows();
  emg2kin::detail::require(envelope.cols() == t_len && spectrogram.cols() == t_len, ErrorCode::LengthMismatch,
                           "envelope, spectrogram and accelerations must share T");
  emg2kin::detail::require(accel.cols() == kJoints, ErrorCode::ShapeMismatch, "accelerations must be [T x 18]");
  emg2kin::detail::require(lag_samples >= 0, ErrorCode::InvalidConfig, "lag must be non-negative");
  const Matrix emg_scores = pca.project(emg_feature_rows(envelope, spectrogram));
  FeatureSequence seq;
  seq.lag = lag_samples;
  seq.features = Matrix::Zero(t_len, emg_scores.cols() + kJoints);
  seq.features.leftCols(emg_scores.cols()) = emg_scores;
  for (Eigen::Index t = lag_samples; t < t_len; ++t)
    seq.features.block(t, emg_scores.cols(), 1, kJoints) = accel.row(t - lag_samples);
  seq.targets = accel;
  return seq;
}

// ---------------------------------------------------------------------------
// Serialization. Doubles are stored as hex-float strings so that a
// round trip is bit-exact.

inline constexpr int kModelSchemaVersion = 1;

inline nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(emg2kin::detail::hexfloat(v(i)));
  return a;
}

inline Vector vector_from_json(const nlohmann::json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = emg2kin::detail::parse_double(a[i].get<std::string>());
  return v;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_to_json(m.row(r).transpose()));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  Matrix m(rows, cols);
  const auto& data = j.at("data");
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = vector_from_json(data.at(static_cast<std::size_t>(r))).transpose();
  return m;
}

inline nlohmann::json to_json(const PcaModel& m) {
  return {{"version", kModelSchemaVersion},
          {"kind", "pca"},
          {"mean", vector_to_json(m.mean)},
          {"components", matrix_to_json(m.components)},
          {"explained_variance", vector_to_json(m.explained_variance)},
          {"total_variance", emg2kin::detail::hexfloat(m.total_variance)},
          {"rank_deficient", m.rank_deficient}};
}

inline void check_schema(const nlohmann::json& j, const char* kind) {
  if (!j.contains("version") || j.at("version").get<int>() != kModelSchemaVersion)
    throw Error(ErrorCode::Parse, std::string(kind) + " document has an unsupported version");
  if (j.value("kind", "") != kind) throw Error(ErrorCode::Parse, std::string("expected a ") + kind + " document");
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
  check_schema(j, "pca");
  PcaModel m;
  m.mean = vector_from_json(j.at("mean"));
  m.components = matrix_from_json(j.at("components"));
  m.explained_variance = vector_from_json(j.at("explained_variance"));
  m.total_variance = emg2kin::detail::parse_double(j.at("total_variance").get<std::string>());
  m.rank_deficient = j.value("rank_deficient", false);
  return m;
}

inline nlohmann::json to_json(const ZScoreModel& m) {
  return {{"version", kModelSchemaVersion}, {"kind", "zscore"}, {"mean", vector_to_json(m.mean)}, {"std", vector_to_json(m.std)}};
}

inline ZScoreModel zscore_from_json(const nlohmann::json& j) {
  check_schema(j, "zscore");
  return {vector_from_json(j.at("mean")), vector_from_json(j.at("std"))};
}

}  // namespace emg2kin::features

#endif  // EMG2KIN_FEATURES_HPP
