// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_PREPROCESS_HPP
#define EMG2KIN_PREPROCESS_HPP

#include "emg2kin/common.hpp"
#include "emg2kin/data_ingest.hpp"
#include "emg2kin/dsp.hpp"
#include "emg2kin/features.hpp"

#include <algorithm>
#include <vector>

namespace emg2kin::preprocess {

using features::FeatureSequence;

struct PreprocessConfig {
  int lag = features::kDefaultLag;
  int kinematic_filter_order = 2;
  double kinematic_cutoff_hz = 5.0;
  features::EnvelopeConfig envelope;
  features::SpectrogramConfig spectrogram;
  int n_components = features::kPcaComponents;
  features::PcaOptions pca;
};

/// Time-aligned 100 Hz signals of one trial before any fitted transform.
struct TrialSignals {
  int participant_id = 0;
  int task_id = 0;
  Matrix envelope;      // [7 x T]
  Matrix spectrogram;   // [3500 x T]
  Matrix acceleration;  // [T x 18] deg/s^2
};

/// Splice phases, then: EMG -> envelope and spectrogram; angles -> 5 Hz
/// zero-phase lowpass -> second derivative. Streams are trimmed to the
/// shortest of the three.
inline TrialSignals extract_signals(const data::Trial& trial, const PreprocessConfig& cfg = {}) {
  const auto rec = data::concatenate_phases(trial);
  TrialSignals s;
  s.participant_id = trial.participant_id;
  s.task_id = trial.task_id;
  Matrix env = features::compute_envelope(rec.emg, cfg.envelope);
  Matrix spec = features::compute_spectrogram(rec.emg, cfg.spectrogram);
  const auto lp = dsp::butterworth_lowpass(cfg.kinematic_filter_order, cfg.kinematic_cutoff_hz, kKinRateHz);
  const Matrix accel = dsp::differentiate_twice(dsp::zero_phase_filter_rows(lp, rec.angles), kKinRateHz);
  const Eigen::Index t_len = std::min({env.cols(), spec.cols(), accel.cols()});
  s.envelope = env.leftCols(t_len);
  s.spectrogram = spec.leftCols(t_len);
  s.acceleration = accel.leftCols(t_len).transpose();
  return s;
}

/// Per-joint affine map applied to targets during training; predictions are
/// mapped back before scoring. Per-joint FVU and correlation are invariant
/// under it.
struct TargetScale {
  Vector mean = Vector::Zero(kJoints);
  Vector std = Vector::Ones(kJoints);

  Matrix normalize(const Matrix& y) const {
    return (y.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
  }
  Matrix denormalize(const Matrix& y) const {
    return (y.array().rowwise() * std.transpose().array()).matrix().rowwise() + mean.transpose();
  }
};

/// Everything fitted on one participant's training tasks, plus the
/// resulting feature sequences for all three splits.
struct PreparedParticipant {
  features::PcaModel pca;
  features::ZScoreModel zscore;
  TargetScale target_scale;
  data::SplitLists<FeatureSequence> sequences;
};

/// PCA, feature z-score and target scale are fitted on training tasks only,
/// so validation and test features do not depend on their own statistics.
inline PreparedParticipant prepare_participant(const std::vector<data::Trial>& trials,
                                               const data::DatasetSplit& split = data::DatasetSplit::standard(),
                                               const PreprocessConfig& cfg = {}) {
  std::vector<TrialSignals> signals;
  signals.reserve(trials.size());
  for (const auto& t : trials) signals.push_back(extract_signals(t, cfg));
  const auto routed = data::split_dataset(signals, split);
  emg2kin::detail::require(!routed.train.empty(), ErrorCode::EmptyDataset, "no training tasks");

  PreparedParticipant out;
  Eigen::Index rows = 0;
  for (const auto& s : routed.train) rows += s.acceleration.rows();
  {
    Matrix pooled(rows, features::kEmgFeatureDim);
    Eigen::Index r = 0;
    for (const auto& s : routed.train) {
      pooled.middleRows(r, s.acceleration.rows()) = features::emg_feature_rows(s.envelope, s.spectrogram);
      r += s.acceleration.rows();
    }
    out.pca = features::fit_pca(pooled, cfg.n_components, cfg.pca);
  }

  auto assemble = [&](const std::vector<TrialSignals>& group) {
    std::vector<FeatureSequence> seqs;
    for (const auto& s : group) {
      FeatureSequence f = features::assemble_features(s.envelope, s.spectrogram, out.pca, s.acceleration, cfg.lag);
      f.participant_id = s.participant_id;
      f.task_id = s.task_id;
      seqs.push_back(std::move(f));
    }
    return seqs;
  };
  auto train = assemble(routed.train);
  auto val = assemble(routed.validation);
  auto test = assemble(routed.test);

  Matrix pooled_features(rows, train.front().features.cols());
  Matrix pooled_targets(rows, kJoints);
  Eigen::Index r = 0;
  for (const auto& s : train) {
    pooled_features.middleRows(r, s.length()) = s.features;
    pooled_targets.middleRows(r, s.length()) = s.targets;
    r += s.length();
  }
  out.zscore = features::fit_zscore(pooled_features);
  const auto tz = features::fit_zscore(pooled_targets);
  out.target_scale.mean = tz.mean;
  out.target_scale.std = tz.std;
  for (auto* group : {&train, &val, &test})
    for (auto& s : *group) s.features = out.zscore.apply(s.features);
  out.sequences = {std::move(train), std::move(val), std::move(test)};
  return out;
}

/// Copies with targets mapped into training units.
inline std::vector<FeatureSequence> with_normalized_targets(const std::vector<FeatureSequence>& seqs,
                                                            const TargetScale& scale) {
  std::vector<FeatureSequence> out = seqs;
  for (auto& s : out) s.targets = scale.normalize(s.targets);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization (hex-float, bit-exact)

inline nlohmann::json to_json(const FeatureSequence& s) {
  return {{"version", features::kModelSchemaVersion},
          {"kind", "feature_sequence"},
          {"participant_id", s.participant_id},
          {"task_id", s.task_id},
          {"lag", s.lag},
          {"features", features::matrix_to_json(s.features)},
          {"targets", features::matrix_to_json(s.targets)}};
}

inline FeatureSequence sequence_from_json(const nlohmann::json& j) {
  features::check_schema(j, "feature_sequence");
  FeatureSequence s;
  s.participant_id = j.at("participant_id").get<int>();
  s.task_id = j.at("task_id").get<int>();
  s.lag = j.at("lag").get<int>();
  s.features = features::matrix_from_json(j.at("features"));
  s.targets = features::matrix_from_json(j.at("targets"));
  emg2kin::detail::require(s.features.rows() == s.targets.rows(), ErrorCode::LengthMismatch,
                           "feature and target lengths differ");
  return s;
}

inline nlohmann::json to_json(const TargetScale& t) {
  return {{"version", features::kModelSchemaVersion},
          {"kind", "target_scale"},
          {"mean", features::vector_to_json(t.mean)},
          {"std", features::vector_to_json(t.std)}};
}

inline TargetScale target_scale_from_json(const nlohmann::json& j) {
  features::check_schema(j, "target_scale");
  return {features::vector_from_json(j.at("mean")), features::vector_from_json(j.at("std"))};
}

}  // namespace emg2kin::preprocess

#endif  // EMG2KIN_PREPROCESS_HPP
