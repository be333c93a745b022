// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_DATA_INGEST_HPP
#define EMG2KIN_DATA_INGEST_HPP

#include "emg2kin/common.hpp"
#include "emg2kin/dsp.hpp"

#include <unsupported/Eigen/FFT>

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <vector>

namespace emg2kin::data {

enum class Phase { reaching = 0, manipulation = 1, release = 2 };

inline constexpr std::array<Phase, 3> kPhaseOrder{Phase::reaching, Phase::manipulation, Phase::release};

inline std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::reaching: return "reaching";
    case Phase::manipulation: return "manipulation";
    case Phase::release: return "release";
  }
  return "?";
}

/// Half-open sample ranges of one movement phase, at both sampling rates.
struct PhaseSegment {
  Phase label = Phase::reaching;
  Eigen::Index emg_begin = 0, emg_end = 0;
  Eigen::Index kin_begin = 0, kin_end = 0;

  Eigen::Index emg_length() const { return emg_end - emg_begin; }
  Eigen::Index kin_length() const { return kin_end - kin_begin; }
};

/// One participant performing one task. `emg` is [7 x N_e] mV at 1 kHz,
/// `angles` is [18 x N_k] degrees at 100 Hz; `phases` index into both.
struct Trial {
  int participant_id = 0;
  int task_id = 0;
  Matrix emg;
  Matrix angles;
  std::vector<PhaseSegment> phases;

  bool has_phase(Phase p) const {
    for (const auto& s : phases)
      if (s.label == p) return true;
    return false;
  }
};

/// A trial after phase splicing: one uninterrupted stream per modality.
struct ContinuousRecording {
  int participant_id = 0;
  int task_id = 0;
  Matrix emg;
  Matrix angles;
};

inline constexpr int kNumTasks = 26;

struct DatasetSplit {
  std::set<int> train_task_ids;
  std::set<int> validation_task_ids;
  std::set<int> test_task_ids;

  static DatasetSplit standard() {
    DatasetSplit s;
    for (int t = 1; t <= 20; ++t) s.train_task_ids.insert(t);
    s.validation_task_ids = {21, 22, 23};
    s.test_task_ids = {24, 25, 26};
    return s;
  }
};

template <class T>
struct SplitLists {
  std::vector<T> train;
  std::vector<T> validation;
  std::vector<T> test;
};

namespace detail {

inline constexpr Eigen::Index kRateTolerance = 10;

inline void check_rates(Eigen::Index n_emg, Eigen::Index n_kin, const std::string& where) {
  if (std::abs(n_emg - kRateRatio * n_kin) > kRateTolerance)
    throw Error(ErrorCode::RateMismatch, where + ": " + std::to_string(n_emg) + " EMG samples vs " +
                                             std::to_string(n_kin) + " kinematic samples");
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

/// Reads a CSV with header `t,<prefix>1..<prefix>n` into a [n x samples]
/// matrix; the time column is discarded.
inline Matrix read_signal_csv(const std::filesystem::path& path, const std::string& prefix, int n) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MissingColumn, path.string() + ": empty file");
  const auto header = split_csv_line(line);
  std::vector<int> column_of(n, -1);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h.size() > prefix.size() && h.compare(0, prefix.size(), prefix) == 0) {
      const int idx = std::atoi(h.c_str() + prefix.size());
      if (idx >= 1 && idx <= n) column_of[idx - 1] = static_cast<int>(c);
    }
  }
  for (int k = 0; k < n; ++k)
    if (column_of[k] < 0)
      throw Error(ErrorCode::MissingColumn, path.string() + ": missing column " + prefix + std::to_string(k + 1));

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    std::vector<double> row(n);
    for (int k = 0; k < n; ++k) {
      const auto c = static_cast<std::size_t>(column_of[k]);
      if (c >= cells.size() || cells[c].empty())
        throw Error(ErrorCode::NaNData, path.string() + ":" + std::to_string(lineno) + ": missing value");
      char* end = nullptr;
      const double v = std::strtod(cells[c].c_str(), &end);
      if (end == cells[c].c_str() || !std::isfinite(v))
        throw Error(ErrorCode::NaNData, path.string() + ":" + std::to_string(lineno) + ": non-finite value '" +
                                            cells[c] + "'");
      row[k] = v;
    }
    rows.push_back(std::move(row));
  }
  Matrix m(n, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (int k = 0; k < n; ++k) m(k, static_cast<Eigen::Index>(t)) = rows[t][k];
  return m;
}

inline void write_signal_csv(const std::filesystem::path& path, const std::string& prefix, const Matrix& m,
                             double fs_hz, Eigen::Index time_offset) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "t";
  for (Eigen::Index k = 0; k < m.rows(); ++k) out << ',' << prefix << (k + 1);
  out << '\n';
  char buf[40];
  for (Eigen::Index t = 0; t < m.cols(); ++t) {
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(time_offset + t) / fs_hz);
    out << buf;
    for (Eigen::Index k = 0; k < m.rows(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", m(k, t));
      out << ',' << buf;
    }
    out << '\n';
  }
}

// Parses the integer following `tag` in a directory name such as P12 or T05.
inline std::optional<int> parse_tagged_id(const std::string& name, char tag) {
  if (name.size() < 2 || name[0] != tag) return std::nullopt;
  for (std::size_t i = 1; i < name.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(name[i]))) return std::nullopt;
  return std::stoi(name.substr(1));
}

}  // namespace detail

/// Loads `<dir>/<phase>_{emg,kin}.csv` for every phase present. Participant and
/// task ids come from the `P<id>/T<id>` path components.
inline Trial load_trial(const std::filesystem::path& task_dir) {
  namespace fs = std::filesystem;
  Trial trial;
  const auto task = detail::parse_tagged_id(task_dir.filename().string(), 'T');
  const auto participant = detail::parse_tagged_id(task_dir.parent_path().filename().string(), 'P');
  if (!task || !participant)
    throw Error(ErrorCode::Parse, task_dir.string() + ": expected .../P<participant>/T<task>");
  trial.task_id = *task;
  trial.participant_id = *participant;

  std::vector<Matrix> emg_parts, kin_parts;
  Eigen::Index emg_pos = 0, kin_pos = 0;
  for (Phase p : kPhaseOrder) {
    const fs::path emg_path = task_dir / (std::string(phase_name(p)) + "_emg.csv");
    const fs::path kin_path = task_dir / (std::string(phase_name(p)) + "_kin.csv");
    const bool has_emg = fs::exists(emg_path), has_kin = fs::exists(kin_path);
    if (!has_emg && !has_kin) continue;
    if (has_emg != has_kin)
      throw Error(ErrorCode::MissingColumn, task_dir.string() + ": phase " + std::string(phase_name(p)) +
                                                " lacks its " + (has_emg ? "kinematic" : "EMG") + " file");
    Matrix emg = detail::read_signal_csv(emg_path, "ch", kEmgChannels);
    Matrix kin = detail::read_signal_csv(kin_path, "j", kJoints);
    detail::check_rates(emg.cols(), kin.cols(), task_dir.string() + "/" + std::string(phase_name(p)));
    PhaseSegment seg{p, emg_pos, emg_pos + emg.cols(), kin_pos, kin_pos + kin.cols()};
    emg_pos = seg.emg_end;
    kin_pos = seg.kin_end;
    trial.phases.push_back(seg);
    emg_parts.push_back(std::move(emg));
    kin_parts.push_back(std::move(kin));
  }
  if (trial.phases.empty()) throw Error(ErrorCode::Io, task_dir.string() + ": no phase files found");
  trial.emg.resize(kEmgChannels, emg_pos);
  trial.angles.resize(kJoints, kin_pos);
  for (std::size_t i = 0; i < trial.phases.size(); ++i) {
    const auto& s = trial.phases[i];
    trial.emg.middleCols(s.emg_begin, s.emg_length()) = emg_parts[i];
    trial.angles.middleCols(s.kin_begin, s.kin_length()) = kin_parts[i];
  }
  detail::check_rates(trial.emg.cols(), trial.angles.cols(), task_dir.string());
  return trial;
}

/// Writes a trial in the on-disk layout read by load_trial.
inline void write_trial(const std::filesystem::path& data_root, const Trial& trial) {
  namespace fs = std::filesystem;
  const fs::path dir = data_root / ("P" + std::to_string(trial.participant_id)) / ("T" + std::to_string(trial.task_id));
  fs::create_directories(dir);
  for (const auto& s : trial.phases) {
    detail::write_signal_csv(dir / (std::string(phase_name(s.label)) + "_emg.csv"), "ch",
                             trial.emg.middleCols(s.emg_begin, s.emg_length()), kEmgRateHz, s.emg_begin);
    detail::write_signal_csv(dir / (std::string(phase_name(s.label)) + "_kin.csv"), "j",
                             trial.angles.middleCols(s.kin_begin, s.kin_length()), kKinRateHz, s.kin_begin);
  }
}

/// All task directories of one participant, ordered by task id.
inline std::vector<Trial> load_participant(const std::filesystem::path& data_root, int participant_id) {
  namespace fs = std::filesystem;
  const fs::path dir = data_root / ("P" + std::to_string(participant_id));
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "participant directory not found: " + dir.string());
  std::vector<std::pair<int, fs::path>> tasks;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    if (auto id = detail::parse_tagged_id(entry.path().filename().string(), 'T')) tasks.emplace_back(*id, entry.path());
  }
  std::sort(tasks.begin(), tasks.end());
  std::vector<Trial> trials;
  for (const auto& [id, path] : tasks) trials.push_back(load_trial(path));
  return trials;
}

/// Splices the phases in reaching -> manipulation -> release order.
inline ContinuousRecording concatenate_phases(const Trial& trial) {
  emg2kin::detail::require(!trial.phases.empty(), ErrorCode::EmptyTrial, "trial has no phases");
  std::vector<PhaseSegment> ordered = trial.phases;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const PhaseSegment& a, const PhaseSegment& b) { return a.label < b.label; });
  Eigen::Index n_emg = 0, n_kin = 0;
  for (const auto& s : ordered) {
    n_emg += s.emg_length();
    n_kin += s.kin_length();
  }
  ContinuousRecording rec;
  rec.participant_id = trial.participant_id;
  rec.task_id = trial.task_id;
  rec.emg.resize(trial.emg.rows(), n_emg);
  rec.angles.resize(trial.angles.rows(), n_kin);
  Eigen::Index pe = 0, pk = 0;
  for (const auto& s : ordered) {
    rec.emg.middleCols(pe, s.emg_length()) = trial.emg.middleCols(s.emg_begin, s.emg_length());
    rec.angles.middleCols(pk, s.kin_length()) = trial.angles.middleCols(s.kin_begin, s.kin_length());
    pe += s.emg_length();
    pk += s.kin_length();
  }
  return rec;
}

/// Routes items by task id into train / validation / test. Input order is
/// preserved within each output list.
template <class T>
SplitLists<T> split_dataset(const std::vector<T>& items, const DatasetSplit& split = DatasetSplit::standard()) {
  SplitLists<T> out;
  for (const auto& item : items) {
    const int id = item.task_id;
    if (split.train_task_ids.count(id))
      out.train.push_back(item);
    else if (split.validation_task_ids.count(id))
      out.validation.push_back(item);
    else if (split.test_task_ids.count(id))
      out.test.push_back(item);
    else
      throw Error(ErrorCode::UnknownTaskId, "task id " + std::to_string(id) + " is outside 1..26");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Ground-truth EMG -> acceleration coupling of the synthetic generator.
struct SyntheticCoupling {
  double emg_gain_mv = 0.05;       // carrier scale
  double activation_baseline = 0.1;
  double activation_center = 0.5;  // subtracted before mixing
  double mixing_scale = 1.5;
  double accel_gain = 400.0;  // deg/s^2 at tanh saturation
  double lowpass_hz = 5.0;
  double band_low_hz = 30.0;   // carrier passband
  double band_high_hz = 440.0;
  double bursts_per_second = 1.5;
};

struct SyntheticConfig {
  int n_tasks = kNumTasks;
  double duration_s = 4.0;
  std::uint64_t seed = 0;
  int participant_id = 1;
  SyntheticCoupling coupling{};
  std::array<double, 3> phase_fractions{0.2, 0.6, 0.2};
};

/// Fixed per-participant linear map of the generator: u = M (a - c) + offset.
struct SyntheticGroundTruth {
  Matrix mixing;  // [18 x 7]
  Vector offset;  // [18]
};

struct SyntheticTrial {
  Trial trial;
  Matrix activation;    // latent envelopes [7 x N_k] at 100 Hz
  Matrix acceleration;  // ground-truth accelerations [18 x N_k]
};

inline SyntheticGroundTruth synthetic_ground_truth(const SyntheticConfig& config) {
  std::mt19937_64 rng(emg2kin::detail::derive_seed(config.seed, 0x6D6978, static_cast<std::uint64_t>(config.participant_id)));
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticGroundTruth gt;
  gt.mixing.resize(kJoints, kEmgChannels);
  gt.offset.resize(kJoints);
  const double scale = config.coupling.mixing_scale / std::sqrt(static_cast<double>(kEmgChannels));
  for (Eigen::Index j = 0; j < kJoints; ++j)
    for (Eigen::Index c = 0; c < kEmgChannels; ++c) gt.mixing(j, c) = scale * normal(rng);
  for (Eigen::Index j = 0; j < kJoints; ++j) gt.offset(j) = 0.1 * normal(rng);
  return gt;
}

/// Causal map from latent activations [7 x N] to accelerations [18 x N]:
/// mix, saturate with tanh, then a single forward pass of the 5 Hz lowpass.
inline Matrix synthetic_acceleration(const SyntheticConfig& config, const SyntheticGroundTruth& gt,
                                     const Matrix& activation) {
  const auto& cp = config.coupling;
  const Matrix drive =
      ((gt.mixing * (activation.array() - cp.activation_center).matrix()).colwise() + gt.offset).array().tanh().matrix();
  const auto lp = dsp::butterworth_lowpass(2, cp.lowpass_hz, kKinRateHz);
  Matrix acc(kJoints, activation.cols());
  std::vector<double> row(static_cast<std::size_t>(activation.cols()));
  for (Eigen::Index j = 0; j < kJoints; ++j) {
    for (Eigen::Index t = 0; t < drive.cols(); ++t) row[t] = drive(j, t);
    const auto y = dsp::lfilter(lp, row);
    for (Eigen::Index t = 0; t < drive.cols(); ++t) acc(j, t) = cp.accel_gain * y[t];
  }
  return acc;
}

namespace detail {

// White Gaussian noise restricted to [lo, hi] Hz by FFT masking, unit variance.
inline std::vector<double> band_limited_noise(std::size_t n, double fs, double lo, double hi, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = normal(rng);
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, x);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t kk = std::min(k, n - k);
    const double f = static_cast<double>(kk) * fs / static_cast<double>(n);
    if (f < lo || f > hi) spec[k] = 0.0;
  }
  std::vector<double> y;
  fft.inv(y, spec);
  double ss = 0.0;
  for (double v : y) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(n));
  if (rms > 0)
    for (double& v : y) v /= rms;
  return y;
}

}  // namespace detail

/// Generates `n_tasks` trials of one synthetic participant together with
/// their latent activations and ground-truth accelerations.
inline std::vector<SyntheticTrial> generate_synthetic_trials(const SyntheticConfig& config) {
  emg2kin::detail::require(config.n_tasks >= 1, ErrorCode::InvalidConfig, "n_tasks must be >= 1");
  emg2kin::detail::require(config.duration_s > 0.0, ErrorCode::InvalidConfig, "duration_s must be > 0");
  const auto n_kin = static_cast<Eigen::Index>(std::lround(config.duration_s * kKinRateHz));
  emg2kin::detail::require(n_kin >= 10, ErrorCode::InvalidConfig, "duration too short (< 0.1 s)");
  const Eigen::Index n_emg = kRateRatio * n_kin;
  const auto& cp = config.coupling;
  const SyntheticGroundTruth gt = synthetic_ground_truth(config);

  std::vector<SyntheticTrial> out;
  for (int task = 1; task <= config.n_tasks; ++task) {
    std::mt19937_64 rng(emg2kin::detail::derive_seed(config.seed, static_cast<std::uint64_t>(config.participant_id),
                                                     static_cast<std::uint64_t>(task)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::poisson_distribution<int> n_bursts_dist(cp.bursts_per_second * config.duration_s);

    // Latent activations: Gaussian bursts on a baseline, at 100 Hz.
    Matrix act = Matrix::Constant(kEmgChannels, n_kin, cp.activation_baseline);
    for (int c = 0; c < kEmgChannels; ++c) {
      const int n_bursts = 1 + n_bursts_dist(rng);
      for (int b = 0; b < n_bursts; ++b) {
        const double center = unif(rng) * config.duration_s;
        const double width = 0.1 + 0.2 * unif(rng);
        const double amp = 0.5 + unif(rng);
        for (Eigen::Index k = 0; k < n_kin; ++k) {
          const double z = (static_cast<double>(k) / kKinRateHz - center) / width;
          act(c, k) += amp * std::exp(-0.5 * z * z);
        }
      }
    }

    SyntheticTrial st;
    Trial& trial = st.trial;
    trial.participant_id = config.participant_id;
    trial.task_id = task;
    trial.emg.resize(kEmgChannels, n_emg);
    for (int c = 0; c < kEmgChannels; ++c) {
      const auto carrier = detail::band_limited_noise(static_cast<std::size_t>(n_emg), kEmgRateHz, cp.band_low_hz,
                                                      cp.band_high_hz, rng);
      for (Eigen::Index n = 0; n < n_emg; ++n) {
        // Activation linearly interpolated onto the 1 kHz grid.
        const Eigen::Index k0 = n / kRateRatio;
        const Eigen::Index k1 = std::min<Eigen::Index>(k0 + 1, n_kin - 1);
        const double frac = static_cast<double>(n % kRateRatio) / kRateRatio;
        const double a = (1.0 - frac) * act(c, k0) + frac * act(c, k1);
        trial.emg(c, n) = cp.emg_gain_mv * a * carrier[static_cast<std::size_t>(n)];
      }
    }

    st.activation = act;
    st.acceleration = synthetic_acceleration(config, gt, act);

    // Angles whose central second difference reproduces the acceleration.
    trial.angles.resize(kJoints, n_kin);
    const double dt2 = 1.0 / (kKinRateHz * kKinRateHz);
    for (int j = 0; j < kJoints; ++j) {
      double theta = 40.0 * (unif(rng) - 0.5);
      double step = 0.0;
      trial.angles(j, 0) = theta;
      for (Eigen::Index k = 1; k < n_kin; ++k) {
        step += st.acceleration(j, k - 1) * dt2;
        theta += step;
        trial.angles(j, k) = theta;
      }
    }

    const double f0 = config.phase_fractions[0];
    const double f1 = config.phase_fractions[0] + config.phase_fractions[1];
    const Eigen::Index b1 = static_cast<Eigen::Index>(std::lround(f0 * static_cast<double>(n_kin)));
    const Eigen::Index b2 = static_cast<Eigen::Index>(std::lround(f1 * static_cast<double>(n_kin)));
    const std::array<Eigen::Index, 4> bounds{0, b1, b2, n_kin};
    for (std::size_t p = 0; p < 3; ++p) {
      if (bounds[p + 1] <= bounds[p]) continue;
      trial.phases.push_back(PhaseSegment{kPhaseOrder[p], kRateRatio * bounds[p], kRateRatio * bounds[p + 1],
                                          bounds[p], bounds[p + 1]});
    }
    out.push_back(std::move(st));
  }
  return out;
}

inline std::vector<Trial> generate_synthetic_dataset(const SyntheticConfig& config) {
  std::vector<Trial> trials;
  for (auto& st : generate_synthetic_trials(config)) trials.push_back(std::move(st.trial));
  return trials;
}

}  // namespace emg2kin::data

#endif  // EMG2KIN_DATA_INGEST_HPP
