// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_EVALUATION_HPP
#define EMG2KIN_EVALUATION_HPP

#include "emg2kin/augment.hpp"
#include "emg2kin/common.hpp"
#include "emg2kin/features.hpp"
#include "emg2kin/metrics.hpp"
#include "emg2kin/network.hpp"
#include "emg2kin/training.hpp"

#include <json.hpp>

#include <bit>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace emg2kin::evaluation {

using features::FeatureSequence;
using metrics::fvu;
using metrics::pearson;

inline const std::vector<double> kNoiseLevelsPct{0, 1, 5, 10, 15, 30};

// ---------------------------------------------------------------------------
// Measurement noise

/// White Gaussian noise whose peak |value| is exactly level_pct% of the
/// task's largest absolute acceleration.
inline Matrix measurement_noise(Eigen::Index rows, double level_pct, double task_max_abs, std::uint64_t seed) {
  emg2kin::detail::require(level_pct >= 0.0, ErrorCode::NegativeLevel, "noise level must be >= 0");
  emg2kin::detail::require(task_max_abs >= 0.0, ErrorCode::InvalidConfig, "task_max_abs must be >= 0");
  return augment::white_noise(rows, kJoints, level_pct / 100.0 * task_max_abs, seed);
}

inline Matrix add_measurement_noise(const Matrix& accels, double level_pct, double task_max_abs, std::uint64_t seed) {
  emg2kin::detail::require(level_pct >= 0.0, ErrorCode::NegativeLevel, "noise level must be >= 0");
  emg2kin::detail::require(accels.cols() == kJoints, ErrorCode::ShapeMismatch, "accelerations must be [T x 18]");
  if (level_pct == 0.0) return accels;
  return accels + measurement_noise(accels.rows(), level_pct, task_max_abs, seed);
}

/// Scale of the lagged-kinematic block inside the (z-scored) feature matrix,
/// so that noise in deg/s^2 can be mapped into feature units.
struct KinematicScale {
  Vector mean = Vector::Zero(kJoints);
  Vector std = Vector::Ones(kJoints);

  static KinematicScale from_zscore(const features::ZScoreModel& z) {
    emg2kin::detail::require(z.mean.size() >= kJoints, ErrorCode::ShapeMismatch, "z-score model too narrow");
    return {z.mean.tail(kJoints), z.std.tail(kJoints)};
  }
};

/// Adds measured-acceleration noise to the lagged columns: feature row t
/// carries the measurement from row t - lag.
inline Matrix corrupt_lagged_inputs(const FeatureSequence& seq, const Matrix& noise, const KinematicScale& scale) {
  emg2kin::detail::require(noise.rows() == seq.length() && noise.cols() == kJoints, ErrorCode::ShapeMismatch,
                           "noise must be [T x 18]");
  Matrix out = seq.features;
  const Eigen::Index offset = out.cols() - kJoints;
  for (Eigen::Index t = seq.lag; t < out.rows(); ++t)
    out.block(t, offset, 1, kJoints).array() += noise.row(t - seq.lag).array() / scale.std.transpose().array();
  return out;
}

// ---------------------------------------------------------------------------
// Predictors

/// Maps a feature matrix [T x n_in] to predictions [T x 18].
using Predictor = std::function<Matrix(const Matrix& features)>;

inline Predictor open_loop(const training::TrainedModel& model) {
  emg2kin::detail::require(model.trained, ErrorCode::UntrainedModel, "model has not been trained");
  return [spec = model.spec, params = model.params](const Matrix& x) {
    return network::forward(spec, params, x, network::Mode::eval);
  };
}

/// Closed-loop inference: the lagged columns are overwritten with the
/// network's own earlier predictions instead of measurements. Steps one
/// timestep at a time; not used by default.
inline Matrix closed_loop_forward(const network::NetworkSpec& spec, const network::NetworkParams& params,
                                  const Matrix& features, int lag, const KinematicScale& scale) {
  emg2kin::detail::require(lag >= 1, ErrorCode::InvalidConfig, "closed-loop needs lag >= 1");
  emg2kin::detail::require(features.cols() == spec.input_dim, ErrorCode::ShapeMismatch, "input width mismatch");
  const Eigen::Index t_len = features.rows();
  std::vector<network::LstmState> states;
  for (const auto& l : params.lstm) states.push_back(network::LstmState::zeros(l.hidden()));
  Matrix out(t_len, spec.output_dim);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    Vector u = features.row(t).transpose();
    if (t >= lag)
      u.tail(kJoints) = ((out.row(t - lag).transpose() - scale.mean).array() / scale.std.array()).matrix();
    Vector act = u;
    if (spec.kind == network::NetworkKind::lstm) {
      for (std::size_t l = 0; l < params.lstm.size(); ++l) {
        states[l] = network::lstm_cell_step(params.lstm[l], states[l], act);
        act = states[l].y;
      }
      for (const auto& d : params.dense) act = d.weight * act + d.bias;
    } else {
      for (std::size_t l = 0; l < params.dense.size(); ++l) {
        act = params.dense[l].weight * act + params.dense[l].bias;
        if (l + 1 < params.dense.size()) act = act.array().tanh().matrix();
      }
    }
    out.row(t) = act.transpose();
  }
  if (!out.allFinite()) throw Error(ErrorCode::NonFiniteActivation, "network produced non-finite outputs");
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct EvaluationRecord {
  int participant_id = 0;
  int task_id = 0;
  int joint = 0;
  double noise_level_pct = 0.0;
  int realization = 0;
  std::uint64_t seed = 0;
  double rho = 0.0;  // NaN when undefined (constant prediction or truth)
  double fvu = 0.0;  // NaN when the truth is constant
};

struct Summary {
  double median = 0, q25 = 0, q75 = 0;
  double mean = 0, standard_error = 0;
  std::size_t n = 0;

  double iqr() const { return q75 - q25; }
};

inline Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.median = metrics::quantile(values, 0.5);
  s.q25 = metrics::quantile(values, 0.25);
  s.q75 = metrics::quantile(values, 0.75);
  const auto ms = metrics::mean_and_standard_error(values);
  s.mean = ms.mean;
  s.standard_error = ms.standard_error;
  s.n = ms.n;
  return s;
}

enum class Metric { rho, fvu };
enum class Axis { participant, task, joint, level, realization };

inline double axis_value(const EvaluationRecord& r, Axis a) {
  switch (a) {
    case Axis::participant: return r.participant_id;
    case Axis::task: return r.task_id;
    case Axis::joint: return r.joint;
    case Axis::level: return r.noise_level_pct;
    case Axis::realization: return r.realization;
  }
  return 0;
}

inline const char* axis_name(Axis a) {
  switch (a) {
    case Axis::participant: return "participant_id";
    case Axis::task: return "task_id";
    case Axis::joint: return "joint";
    case Axis::level: return "noise_level_pct";
    case Axis::realization: return "realization";
  }
  return "";
}

namespace detail {
inline std::string number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline nlohmann::json summary_json(const Summary& s) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"median", num(s.median)}, {"q25", num(s.q25)}, {"q75", num(s.q75)},
          {"mean", num(s.mean)},     {"se", num(s.standard_error)}, {"n", s.n}};
}
}  // namespace detail

struct EvaluationReport {
  std::vector<EvaluationRecord> records;

  /// Groups records by the given axes and summarizes one metric per group;
  /// the remaining axes are pooled. An empty axis list pools everything.
  std::map<std::vector<double>, Summary> aggregate(Metric metric, const std::vector<Axis>& by) const {
    std::map<std::vector<double>, std::vector<double>> groups;
    for (const auto& r : records) {
      std::vector<double> key;
      for (Axis a : by) key.push_back(axis_value(r, a));
      groups[key].push_back(metric == Metric::rho ? r.rho : r.fvu);
    }
    std::map<std::vector<double>, Summary> out;
    for (const auto& [k, v] : groups) out[k] = summarize(v);
    return out;
  }

  Summary overall(Metric metric) const { return aggregate(metric, {}).at({}); }

  std::string to_csv() const {
    std::string out = "participant_id,task_id,joint,noise_level_pct,realization,seed,rho,fvu\n";
    for (const auto& r : records) {
      out += std::to_string(r.participant_id) + ',' + std::to_string(r.task_id) + ',' + std::to_string(r.joint) + ',' +
             detail::number(r.noise_level_pct) + ',' + std::to_string(r.realization) + ',' + std::to_string(r.seed) +
             ',' + detail::number(r.rho) + ',' + detail::number(r.fvu) + '\n';
    }
    return out;
  }

  /// Summary tables: by noise level (architecture comparisons), by
  /// task x level and joint x level (medians with IQR), by participant.
  nlohmann::json summary_json() const {
    nlohmann::json j;
    auto table = [&](const std::vector<Axis>& by) {
      nlohmann::json rows = nlohmann::json::array();
      const auto rho = aggregate(Metric::rho, by), err = aggregate(Metric::fvu, by);
      for (const auto& [key, s] : rho) {
        nlohmann::json row;
        for (std::size_t i = 0; i < by.size(); ++i) row[axis_name(by[i])] = key[i];
        row["rho"] = detail::summary_json(s);
        row["fvu"] = detail::summary_json(err.at(key));
        rows.push_back(row);
      }
      return rows;
    };
    j["overall"] = table({});
    j["by_level"] = table({Axis::level});
    j["by_task_level"] = table({Axis::task, Axis::level});
    j["by_joint_level"] = table({Axis::joint, Axis::level});
    j["by_participant"] = table({Axis::participant});
    j["n_records"] = records.size();
    return j;
  }
};

// ---------------------------------------------------------------------------
// Sweep

struct SweepConfig {
  std::vector<double> levels_pct = kNoiseLevelsPct;
  int n_realizations = 5;
  std::uint64_t seed = 0;
  KinematicScale scale;
};

inline std::uint64_t cell_seed(std::uint64_t base, int task_id, double level_pct, int realization) {
  return emg2kin::detail::derive_seed(base, static_cast<std::uint64_t>(task_id), std::bit_cast<std::uint64_t>(level_pct),
                                      static_cast<std::uint64_t>(realization));
}

/// Per-joint metrics over one sequence; undefined values become NaN.
inline void score_sequence(const Matrix& pred, const Matrix& truth, EvaluationRecord proto,
                           std::vector<EvaluationRecord>& out) {
  for (int j = 0; j < kJoints; ++j) {
    const auto p = metrics::column(pred, j), t = metrics::column(truth, j);
    EvaluationRecord r = proto;
    r.joint = j;
    try {
      r.rho = pearson(p, t);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ConstantInput) throw;
      r.rho = std::nan("");
    }
    try {
      r.fvu = fvu(p, t);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ConstantTruth) throw;
      r.fvu = std::nan("");
    }
    out.push_back(r);
  }
}

/// Every (task, level, realization) cell: corrupt the lagged inputs, predict,
/// and score each joint against the noiseless targets. Level 0 runs once per
/// realization with the untouched features.
inline EvaluationReport robustness_sweep(const Predictor& predict, const std::vector<FeatureSequence>& tests,
                                         const SweepConfig& cfg) {
  emg2kin::detail::require(!tests.empty(), ErrorCode::EmptyDataset, "no test sequences");
  emg2kin::detail::require(cfg.n_realizations >= 1, ErrorCode::InvalidConfig, "n_realizations must be >= 1");
  for (double l : cfg.levels_pct) emg2kin::detail::require(l >= 0.0, ErrorCode::NegativeLevel, "noise level must be >= 0");
  EvaluationReport report;
  for (const auto& seq : tests) {
    const double task_max = seq.targets.cwiseAbs().maxCoeff();
    for (double level : cfg.levels_pct) {
      for (int k = 0; k < cfg.n_realizations; ++k) {
        EvaluationRecord proto;
        proto.participant_id = seq.participant_id;
        proto.task_id = seq.task_id;
        proto.noise_level_pct = level;
        proto.realization = k;
        proto.seed = cell_seed(cfg.seed, seq.task_id, level, k);
        const Matrix x = level == 0.0
                             ? seq.features
                             : corrupt_lagged_inputs(seq, measurement_noise(seq.length(), level, task_max, proto.seed),
                                                     cfg.scale);
        const Matrix pred = predict(x);
        emg2kin::detail::require(pred.rows() == seq.targets.rows() && pred.cols() == kJoints,
                                 ErrorCode::ShapeMismatch, "predictor output must be [T x 18]");
        score_sequence(pred, seq.targets, proto, report.records);
      }
    }
  }
  return report;
}

inline EvaluationReport robustness_sweep(const training::TrainedModel& model, const std::vector<FeatureSequence>& tests,
                                         const SweepConfig& cfg) {
  return robustness_sweep(open_loop(model), tests, cfg);
}

}  // namespace emg2kin::evaluation

#endif  // EMG2KIN_EVALUATION_HPP
