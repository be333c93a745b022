// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_NETWORK_HPP
#define EMG2KIN_NETWORK_HPP

#include "emg2kin/common.hpp"
#include "emg2kin/features.hpp"

#include <json.hpp>

#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace emg2kin::network {

enum class NetworkKind { lstm, feedforward };
enum class Mode { train, eval };

/// Gate order inside the stacked LSTM parameter blocks.
enum class Gate : int { forget = 0, input = 1, output = 2, candidate = 3 };

/// Architecture description. LSTM stacks feed a FC(36) -> dropout -> FC(18)
/// head; feedforward nets are tanh layers with dropout after every hidden
/// activation and a linear 18-unit output.
struct NetworkSpec {
  NetworkKind kind = NetworkKind::lstm;
  std::vector<int> units_per_layer;
  int input_dim = features::kFeatureDim;
  int head_units = 36;
  int output_dim = kJoints;
  double dropout = 0.5;

  int n_layers() const { return static_cast<int>(units_per_layer.size()); }

  /// Total units are split evenly (floor) across layers.
  static NetworkSpec lstm(int n_layers, int total_units, int input_dim = features::kFeatureDim) {
    return make(NetworkKind::lstm, n_layers, total_units, input_dim);
  }
  static NetworkSpec feedforward(int n_layers, int total_units, int input_dim = features::kFeatureDim) {
    return make(NetworkKind::feedforward, n_layers, total_units, input_dim);
  }

  std::string name() const {
    return (kind == NetworkKind::lstm ? "lstm" : "ff") + std::to_string(n_layers());
  }

  void validate() const {
    emg2kin::detail::require(n_layers() >= 1, ErrorCode::InvalidConfig, "network needs at least one layer");
    for (int u : units_per_layer) emg2kin::detail::require(u >= 1, ErrorCode::InvalidConfig, "layer width must be >= 1");
    emg2kin::detail::require(input_dim >= 1 && output_dim >= 1, ErrorCode::InvalidConfig, "bad input/output width");
    emg2kin::detail::require(dropout >= 0.0 && dropout < 1.0, ErrorCode::InvalidConfig, "dropout must lie in [0, 1)");
    if (kind == NetworkKind::lstm)
      emg2kin::detail::require(head_units >= 1, ErrorCode::InvalidConfig, "head width must be >= 1");
  }

 private:
  static NetworkSpec make(NetworkKind kind, int n_layers, int total_units, int input_dim) {
    emg2kin::detail::require(n_layers >= 1 && total_units >= n_layers, ErrorCode::InvalidConfig,
                             "need at least one unit per layer");
    NetworkSpec s;
    s.kind = kind;
    s.input_dim = input_dim;
    s.units_per_layer.assign(static_cast<std::size_t>(n_layers), total_units / n_layers);
    return s;
  }
};

/// Weights of one LSTM layer. The four gates are stacked row-wise in
/// `Gate` order: recurrent = [A_f; A_i; A_o; A_h], input = [B_f; ...],
/// bias = [b_f; ...].
struct LstmLayerParams {
  Matrix recurrent;  // [4h x h]
  Matrix input;      // [4h x n_in]
  Vector bias;       // [4h]

  static LstmLayerParams zeros(int hidden, int n_in) {
    return {Matrix::Zero(4 * hidden, hidden), Matrix::Zero(4 * hidden, n_in), Vector::Zero(4 * hidden)};
  }
  int hidden() const { return static_cast<int>(recurrent.cols()); }
  int inputs() const { return static_cast<int>(input.cols()); }

  auto A(Gate g) { return recurrent.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto A(Gate g) const { return recurrent.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto B(Gate g) { return input.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto B(Gate g) const { return input.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto b(Gate g) { return bias.segment(static_cast<int>(g) * hidden(), hidden()); }
  auto b(Gate g) const { return bias.segment(static_cast<int>(g) * hidden(), hidden()); }
};

struct DenseParams {
  Matrix weight;  // [out x in]
  Vector bias;    // [out]
};

/// For LSTM nets `dense` holds the two head layers; for feedforward nets the
/// hidden layers followed by the output layer.
struct NetworkParams {
  std::vector<LstmLayerParams> lstm;
  std::vector<DenseParams> dense;

  /// Visits every tensor as a flat view: f(name, Eigen::Map<Vector>, is_weight).
  template <class F>
  void for_each_tensor(F&& f) {
    for (std::size_t l = 0; l < lstm.size(); ++l) {
      const std::string p = "lstm" + std::to_string(l) + ".";
      f(p + "recurrent", Eigen::Map<Vector>(lstm[l].recurrent.data(), lstm[l].recurrent.size()), true);
      f(p + "input", Eigen::Map<Vector>(lstm[l].input.data(), lstm[l].input.size()), true);
      f(p + "bias", Eigen::Map<Vector>(lstm[l].bias.data(), lstm[l].bias.size()), false);
    }
    for (std::size_t l = 0; l < dense.size(); ++l) {
      const std::string p = "dense" + std::to_string(l) + ".";
      f(p + "weight", Eigen::Map<Vector>(dense[l].weight.data(), dense[l].weight.size()), true);
      f(p + "bias", Eigen::Map<Vector>(dense[l].bias.data(), dense[l].bias.size()), false);
    }
  }

  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<NetworkParams*>(this)->for_each_tensor(
        [&](const std::string& name, Eigen::Map<Vector> v, bool w) { f(name, Eigen::Map<const Vector>(v.data(), v.size()), w); });
  }

  Eigen::Index size() const {
    Eigen::Index n = 0;
    for_each_tensor([&](const std::string&, Eigen::Map<const Vector> v, bool) { n += v.size(); });
    return n;
  }

  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    z.for_each_tensor([](const std::string&, Eigen::Map<Vector> v, bool) { v.setZero(); });
    return z;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, Eigen::Map<const Vector> v, bool) { ok = ok && v.allFinite(); });
    return ok;
  }
};

inline NetworkParams zero_params(const NetworkSpec& spec) {
  spec.validate();
  NetworkParams p;
  int n_in = spec.input_dim;
  if (spec.kind == NetworkKind::lstm) {
    for (int h : spec.units_per_layer) {
      p.lstm.push_back(LstmLayerParams::zeros(h, n_in));
      n_in = h;
    }
    p.dense.push_back({Matrix::Zero(spec.head_units, n_in), Vector::Zero(spec.head_units)});
    p.dense.push_back({Matrix::Zero(spec.output_dim, spec.head_units), Vector::Zero(spec.output_dim)});
  } else {
    for (int h : spec.units_per_layer) {
      p.dense.push_back({Matrix::Zero(h, n_in), Vector::Zero(h)});
      n_in = h;
    }
    p.dense.push_back({Matrix::Zero(spec.output_dim, n_in), Vector::Zero(spec.output_dim)});
  }
  return p;
}

/// Glorot-uniform weights, zero biases except the LSTM forget gate (1.0).
inline NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  NetworkParams p = zero_params(spec);
  std::mt19937_64 rng(seed);
  auto fill = [&](auto&& block, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> unif(-limit, limit);
    for (Eigen::Index c = 0; c < block.cols(); ++c)
      for (Eigen::Index r = 0; r < block.rows(); ++r) block(r, c) = unif(rng);
  };
  for (auto& layer : p.lstm) {
    const double h = layer.hidden(), n_in = layer.inputs();
    for (Gate g : {Gate::forget, Gate::input, Gate::output, Gate::candidate}) {
      fill(layer.A(g), h, h);
      fill(layer.B(g), n_in, h);
    }
    layer.b(Gate::forget).setOnes();
  }
  for (auto& d : p.dense) fill(d.weight, static_cast<double>(d.weight.cols()), static_cast<double>(d.weight.rows()));
  return p;
}

// ---------------------------------------------------------------------------
// Single cell step

struct LstmState {
  Vector h;  // hidden memory
  Vector y;  // output memory

  static LstmState zeros(int hidden) { return {Vector::Zero(hidden), Vector::Zero(hidden)}; }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One step of the gated recurrence; returns the new state (its `y` is the
/// layer output).
inline LstmState lstm_cell_step(const LstmLayerParams& p, const LstmState& state, const Vector& u) {
  emg2kin::detail::require(state.h.size() == p.hidden() && state.y.size() == p.hidden() && u.size() == p.inputs(),
                           ErrorCode::ShapeMismatch, "lstm_cell_step: shape mismatch");
  const Vector z = p.recurrent * state.y + p.input * u + p.bias;
  const int h = p.hidden();
  const Vector f = z.segment(0, h).unaryExpr(&sigmoid);
  const Vector i = z.segment(h, h).unaryExpr(&sigmoid);
  const Vector o = z.segment(2 * h, h).unaryExpr(&sigmoid);
  const Vector cand = z.segment(3 * h, h).array().tanh();
  LstmState next;
  next.h = f.cwiseProduct(state.h) + i.cwiseProduct(cand);
  next.y = o.cwiseProduct(next.h.array().tanh().matrix());
  return next;
}

// ---------------------------------------------------------------------------
// Batched sequences

/// Sequences padded to a common length, stored time-major: column t*B + b is
/// timestep t of sequence b. `mask` is 1 on valid steps, 0 on padding.
struct SequenceBatch {
  Eigen::Index steps = 0;
  Eigen::Index batch = 0;
  Matrix inputs;   // [n_in x T*B]
  Matrix targets;  // [out x T*B] (may be empty for inference)
  RowVector mask;  // [T*B]
  std::vector<Eigen::Index> lengths;
};

inline SequenceBatch make_batch(std::span<const features::FeatureSequence* const> seqs, bool with_targets = true) {
  SequenceBatch b;
  b.batch = static_cast<Eigen::Index>(seqs.size());
  emg2kin::detail::require(b.batch > 0, ErrorCode::EmptyDataset, "empty batch");
  const Eigen::Index n_in = seqs[0]->features.cols();
  for (const auto* s : seqs) {
    emg2kin::detail::require(s->features.cols() == n_in, ErrorCode::ShapeMismatch, "batch feature widths differ");
    b.steps = std::max(b.steps, s->features.rows());
    b.lengths.push_back(s->features.rows());
  }
  const Eigen::Index cols = b.steps * b.batch;
  b.inputs = Matrix::Zero(n_in, cols);
  b.mask = RowVector::Zero(cols);
  if (with_targets) b.targets = Matrix::Zero(seqs[0]->targets.cols(), cols);
  for (Eigen::Index j = 0; j < b.batch; ++j) {
    const auto& s = *seqs[static_cast<std::size_t>(j)];
    for (Eigen::Index t = 0; t < s.features.rows(); ++t) {
      b.inputs.col(t * b.batch + j) = s.features.row(t).transpose();
      if (with_targets) b.targets.col(t * b.batch + j) = s.targets.row(t).transpose();
      b.mask(t * b.batch + j) = 1.0;
    }
  }
  return b;
}

namespace detail {

// Inverted-dropout multipliers (0 or 1/(1-p)) derived from a counter hash so
// that the mask is a pure function of (seed, layer, position).
inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t seed, int layer) {
  Matrix m(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  const std::uint64_t base = emg2kin::detail::derive_seed(seed, 0xD50, static_cast<std::uint64_t>(layer));
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) {
      const std::uint64_t h = emg2kin::detail::splitmix64(base ^ (static_cast<std::uint64_t>(c) * 0x100000001B3ULL + r));
      const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
      m(r, c) = u < p ? 0.0 : keep_scale;
    }
  return m;
}

struct LstmCache {
  Matrix gates;  // activated [4h x TB]: f, i, o, candidate
  Matrix cell;   // h [h x TB]
  Matrix tanh_cell;
  Matrix out;    // y [h x TB]
};

struct ForwardCache {
  std::vector<Matrix> layer_inputs;  // input of each LSTM / dense layer
  std::vector<LstmCache> lstm;
  std::vector<Matrix> dense_pre;     // pre-dropout activations of dense layers
  std::vector<Matrix> masks;         // dropout multipliers (empty in eval)
  Matrix output;                     // [out x TB]
};

inline void lstm_layer_forward(const LstmLayerParams& p, const Matrix& x, Eigen::Index steps, Eigen::Index batch,
                               LstmCache& cache) {
  const int h = p.hidden();
  Matrix pre = p.input * x;
  pre.colwise() += p.bias;
  cache.gates.resize(4 * h, x.cols());
  cache.cell.resize(h, x.cols());
  cache.tanh_cell.resize(h, x.cols());
  cache.out.resize(h, x.cols());
  Matrix z(4 * h, batch);
  for (Eigen::Index t = 0; t < steps; ++t) {
    const Eigen::Index c0 = t * batch;
    z = pre.middleCols(c0, batch);
    if (t > 0) z.noalias() += p.recurrent * cache.out.middleCols(c0 - batch, batch);
    auto g = cache.gates.middleCols(c0, batch);
    g.topRows(3 * h) = (1.0 + (-z.topRows(3 * h).array()).exp()).inverse().matrix();
    g.bottomRows(h) = z.bottomRows(h).array().tanh().matrix();
    auto cell = cache.cell.middleCols(c0, batch);
    if (t > 0)
      cell = g.topRows(h).cwiseProduct(cache.cell.middleCols(c0 - batch, batch)) +
             g.middleRows(h, h).cwiseProduct(g.bottomRows(h));
    else
      cell = g.middleRows(h, h).cwiseProduct(g.bottomRows(h));
    cache.tanh_cell.middleCols(c0, batch) = cell.array().tanh().matrix();
    cache.out.middleCols(c0, batch) = g.middleRows(2 * h, h).cwiseProduct(cache.tanh_cell.middleCols(c0, batch));
  }
}

// Returns dX for the layer input and accumulates parameter gradients.
inline Matrix lstm_layer_backward(const LstmLayerParams& p, const Matrix& x, const LstmCache& cache, const Matrix& d_out,
                                  Eigen::Index steps, Eigen::Index batch, LstmLayerParams& grad) {
  const int h = p.hidden();
  Matrix dz_all(4 * h, x.cols());
  Matrix dy_rec = Matrix::Zero(h, batch);
  Matrix dcell_next = Matrix::Zero(h, batch);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const Eigen::Index c0 = t * batch;
    const auto g = cache.gates.middleCols(c0, batch);
    const auto f = g.topRows(h).array();
    const auto i = g.middleRows(h, h).array();
    const auto o = g.middleRows(2 * h, h).array();
    const auto cand = g.bottomRows(h).array();
    const auto tc = cache.tanh_cell.middleCols(c0, batch).array();
    const Matrix dy = d_out.middleCols(c0, batch) + dy_rec;
    const Matrix dcell = (dy.array() * o * (1.0 - tc.square()) + dcell_next.array()).matrix();
    auto dz = dz_all.middleCols(c0, batch);
    dz.middleRows(2 * h, h) = (dy.array() * tc * o * (1.0 - o)).matrix();
    if (t > 0)
      dz.topRows(h) = (dcell.array() * cache.cell.middleCols(c0 - batch, batch).array() * f * (1.0 - f)).matrix();
    else
      dz.topRows(h).setZero();
    dz.middleRows(h, h) = (dcell.array() * cand * i * (1.0 - i)).matrix();
    dz.bottomRows(h) = (dcell.array() * i * (1.0 - cand.square())).matrix();
    dcell_next = (dcell.array() * f).matrix();
    if (t > 0) dy_rec.noalias() = p.recurrent.transpose() * dz;
  }
  if (steps > 1)
    grad.recurrent.noalias() += dz_all.rightCols((steps - 1) * batch) * cache.out.leftCols((steps - 1) * batch).transpose();
  grad.input.noalias() += dz_all * x.transpose();
  grad.bias += dz_all.rowwise().sum();
  return p.input.transpose() * dz_all;
}

inline ForwardCache forward_impl(const NetworkSpec& spec, const NetworkParams& params, const SequenceBatch& batch,
                                 Mode mode, std::uint64_t dropout_seed) {
  ForwardCache cache;
  Matrix act = batch.inputs;
  emg2kin::detail::require(act.rows() == spec.input_dim, ErrorCode::ShapeMismatch,
                           "input width " + std::to_string(act.rows()) + " != " + std::to_string(spec.input_dim));
  const bool drop = mode == Mode::train && spec.dropout > 0.0;
  int layer_id = 0;
  auto dense = [&](const DenseParams& d, bool hidden_tanh, bool dropout_after) {
    cache.layer_inputs.push_back(act);
    Matrix z = d.weight * act;
    z.colwise() += d.bias;
    if (hidden_tanh) z = z.array().tanh().matrix();
    cache.dense_pre.push_back(z);
    if (dropout_after && drop) {
      cache.masks.push_back(dropout_mask(z.rows(), z.cols(), spec.dropout, dropout_seed, layer_id));
      act = z.cwiseProduct(cache.masks.back());
    } else {
      cache.masks.emplace_back();
      act = std::move(z);
    }
    ++layer_id;
  };
  if (spec.kind == NetworkKind::lstm) {
    cache.lstm.resize(params.lstm.size());
    for (std::size_t l = 0; l < params.lstm.size(); ++l) {
      cache.layer_inputs.push_back(act);
      lstm_layer_forward(params.lstm[l], act, batch.steps, batch.batch, cache.lstm[l]);
      act = cache.lstm[l].out;
      ++layer_id;
    }
    dense(params.dense[0], false, true);
    dense(params.dense[1], false, false);
  } else {
    for (std::size_t l = 0; l + 1 < params.dense.size(); ++l) dense(params.dense[l], true, true);
    dense(params.dense.back(), false, false);
  }
  cache.output = std::move(act);
  if (!cache.output.allFinite()) throw Error(ErrorCode::NonFiniteActivation, "network produced non-finite outputs");
  return cache;
}

}  // namespace detail

/// Batched forward pass; returns [out x T*B] in batch layout.
inline Matrix forward_batch(const NetworkSpec& spec, const NetworkParams& params, const SequenceBatch& batch, Mode mode,
                            std::uint64_t dropout_seed = 0) {
  return detail::forward_impl(spec, params, batch, mode, dropout_seed).output;
}

/// Forward pass over one sequence [T x n_in] from zero initial states;
/// returns [T x 18].
inline Matrix forward(const NetworkSpec& spec, const NetworkParams& params, const Matrix& sequence, Mode mode,
                      std::uint64_t dropout_seed = 0) {
  features::FeatureSequence s;
  s.features = sequence;
  const features::FeatureSequence* ptr = &s;
  const SequenceBatch b = make_batch(std::span<const features::FeatureSequence* const>(&ptr, 1), false);
  return forward_batch(spec, params, b, mode, dropout_seed).transpose();
}

struct LossAndGrad {
  double loss = 0.0;
  NetworkParams grads;
};

/// Mean squared error over valid (timestep, joint) entries and its exact
/// gradient by backpropagation through time. Dropout masks are regenerated
/// from `dropout_seed`, so they match forward_batch in train mode.
inline LossAndGrad backward_batch(const NetworkSpec& spec, const NetworkParams& params, const SequenceBatch& batch,
                                  std::uint64_t dropout_seed, Mode mode = Mode::train) {
  emg2kin::detail::require(batch.targets.rows() == spec.output_dim && batch.targets.cols() == batch.inputs.cols(),
                           ErrorCode::ShapeMismatch, "targets shape mismatch");
  detail::ForwardCache cache = detail::forward_impl(spec, params, batch, mode, dropout_seed);
  const double n_valid = batch.mask.sum() * static_cast<double>(spec.output_dim);
  LossAndGrad out;
  out.grads = params.zeros_like();
  if (n_valid == 0.0) return out;

  Matrix diff = cache.output - batch.targets;
  diff.array().rowwise() *= batch.mask.array();
  out.loss = diff.squaredNorm() / n_valid;
  Matrix d_act = (2.0 / n_valid) * diff;

  // Dense layers, last to first.
  const std::size_t n_dense = params.dense.size();
  const std::size_t dense_offset = spec.kind == NetworkKind::lstm ? params.lstm.size() : 0;
  for (std::size_t k = n_dense; k-- > 0;) {
    const bool hidden_tanh = spec.kind == NetworkKind::feedforward && k + 1 < n_dense;
    const Matrix& mask = cache.masks[k];
    Matrix dz = mask.size() ? d_act.cwiseProduct(mask) : d_act;
    if (hidden_tanh) dz.array() *= 1.0 - cache.dense_pre[k].array().square();
    const Matrix& x = cache.layer_inputs[dense_offset + k];
    out.grads.dense[k].weight.noalias() += dz * x.transpose();
    out.grads.dense[k].bias += dz.rowwise().sum();
    d_act = params.dense[k].weight.transpose() * dz;
  }
  for (std::size_t l = params.lstm.size(); l-- > 0;) {
    d_act = detail::lstm_layer_backward(params.lstm[l], cache.layer_inputs[l], cache.lstm[l], d_act, batch.steps,
                                        batch.batch, out.grads.lstm[l]);
  }
  return out;
}

/// Single-sequence form: `mask` [T] marks valid steps.
inline LossAndGrad backward(const NetworkSpec& spec, const NetworkParams& params, const Matrix& sequence,
                            const Matrix& targets, const Vector& mask, std::uint64_t dropout_seed,
                            Mode mode = Mode::train) {
  emg2kin::detail::require(targets.rows() == sequence.rows() && mask.size() == sequence.rows(), ErrorCode::ShapeMismatch,
                           "sequence, targets and mask lengths differ");
  features::FeatureSequence s;
  s.features = sequence;
  s.targets = targets;
  const features::FeatureSequence* ptr = &s;
  SequenceBatch b = make_batch(std::span<const features::FeatureSequence* const>(&ptr, 1), true);
  b.mask = mask.transpose();
  return backward_batch(spec, params, b, dropout_seed, mode);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  NetworkSpec spec;
  NetworkParams params;
  std::string pca_model_ref;
  std::string zscore_model_ref;
  std::map<std::string, std::uint64_t> seed_lineage;
};

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"kind", s.kind == NetworkKind::lstm ? "lstm" : "feedforward"},
          {"units_per_layer", s.units_per_layer},
          {"input_dim", s.input_dim},
          {"head_units", s.head_units},
          {"output_dim", s.output_dim},
          {"dropout", emg2kin::detail::hexfloat(s.dropout)}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "lstm" && kind != "feedforward") throw Error(ErrorCode::Parse, "unknown network kind " + kind);
  s.kind = kind == "lstm" ? NetworkKind::lstm : NetworkKind::feedforward;
  s.units_per_layer = j.at("units_per_layer").get<std::vector<int>>();
  s.input_dim = j.at("input_dim").get<int>();
  s.head_units = j.at("head_units").get<int>();
  s.output_dim = j.at("output_dim").get<int>();
  s.dropout = emg2kin::detail::parse_double(j.at("dropout").get<std::string>());
  s.validate();
  return s;
}

inline nlohmann::json to_json(const NetworkParams& p) {
  nlohmann::json tensors = nlohmann::json::object();
  p.for_each_tensor([&](const std::string& name, Eigen::Map<const Vector> v, bool) {
    tensors[name] = features::vector_to_json(v);
  });
  return tensors;
}

inline nlohmann::json to_json(const Checkpoint& c) {
  nlohmann::json lineage = nlohmann::json::object();
  for (const auto& [k, v] : c.seed_lineage) lineage[k] = std::to_string(v);
  return {{"version", kCheckpointVersion},
          {"kind", "checkpoint"},
          {"spec", to_json(c.spec)},
          {"params", to_json(c.params)},
          {"pca_model_ref", c.pca_model_ref},
          {"zscore_model_ref", c.zscore_model_ref},
          {"seed_lineage", lineage}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "checkpoint" || j.value("version", 0) != kCheckpointVersion)
    throw Error(ErrorCode::Parse, "not a version-" + std::to_string(kCheckpointVersion) + " checkpoint");
  Checkpoint c;
  c.spec = spec_from_json(j.at("spec"));
  c.params = zero_params(c.spec);
  const auto& tensors = j.at("params");
  c.params.for_each_tensor([&](const std::string& name, Eigen::Map<Vector> v, bool) {
    const Vector loaded = features::vector_from_json(tensors.at(name));
    if (loaded.size() != v.size()) throw Error(ErrorCode::ShapeMismatch, "checkpoint tensor " + name + " has wrong size");
    v = loaded;
  });
  c.pca_model_ref = j.value("pca_model_ref", "");
  c.zscore_model_ref = j.value("zscore_model_ref", "");
  for (const auto& [k, v] : j.at("seed_lineage").items()) c.seed_lineage[k] = std::stoull(v.get<std::string>());
  return c;
}

}  // namespace emg2kin::network

#endif  // EMG2KIN_NETWORK_HPP
