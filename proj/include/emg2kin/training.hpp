// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_TRAINING_HPP
#define EMG2KIN_TRAINING_HPP

#include "emg2kin/common.hpp"
#include "emg2kin/features.hpp"
#include "emg2kin/metrics.hpp"
#include "emg2kin/network.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

namespace emg2kin::training {

using features::FeatureSequence;
using network::NetworkParams;
using network::NetworkSpec;

struct TrainConfig {
  double initial_lr = 1e-3;
  int lr_drop_period = 10;
  double lr_drop_factor = 0.1;
  double gradient_threshold = 1.0;
  double l2_strength = 0.0;
  int batch_size = 40;
  int max_epochs = 30;
  int patience = 3;
  bool early_stopping = true;
  std::uint64_t seed = 0;

  void validate() const {
    using emg2kin::detail::require;
    require(initial_lr > 0, ErrorCode::InvalidConfig, "initial_lr must be > 0");
    require(lr_drop_period >= 1, ErrorCode::InvalidConfig, "lr_drop_period must be >= 1");
    require(lr_drop_factor > 0 && lr_drop_factor <= 1, ErrorCode::InvalidConfig, "lr_drop_factor must lie in (0, 1]");
    require(gradient_threshold > 0, ErrorCode::InvalidConfig, "gradient_threshold must be > 0");
    require(l2_strength >= 0, ErrorCode::InvalidConfig, "l2_strength must be >= 0");
    require(batch_size >= 1, ErrorCode::InvalidConfig, "batch_size must be >= 1");
    require(max_epochs >= 0, ErrorCode::InvalidConfig, "max_epochs must be >= 0");
    require(patience >= 1, ErrorCode::InvalidConfig, "patience must be >= 1");
  }

  /// Piecewise-constant schedule, epochs counted from 0.
  double learning_rate(int epoch) const {
    return initial_lr * std::pow(lr_drop_factor, static_cast<double>(epoch / lr_drop_period));
  }
};

// ---------------------------------------------------------------------------
// Gradient clipping and Adam

inline double global_norm(const NetworkParams& grads) {
  double ss = 0.0;
  grads.for_each_tensor([&](const std::string&, Eigen::Map<const Vector> v, bool) { ss += v.squaredNorm(); });
  return std::sqrt(ss);
}

/// Rescales all tensors together when their joint L2 norm exceeds threshold.
inline NetworkParams clip_gradients(NetworkParams grads, double threshold) {
  emg2kin::detail::require(threshold > 0, ErrorCode::InvalidConfig, "clip threshold must be > 0");
  const double norm = global_norm(grads);
  if (norm > threshold) {
    const double scale = threshold / norm;
    grads.for_each_tensor([&](const std::string&, Eigen::Map<Vector> v, bool) { v *= scale; });
  }
  return grads;
}

struct AdamState {
  NetworkParams m;
  NetworkParams v;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const NetworkParams& p) { return {p.zeros_like(), p.zeros_like()}; }
};

/// One Adam update in place. The L2 term l2_strength * w is added to the
/// gradient of weight tensors (not biases) before the moment updates.
inline void adam_step(AdamState& state, NetworkParams& params, const NetworkParams& grads, double lr, double l2_strength) {
  ++state.step_count;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  std::vector<Eigen::Map<Vector>> p, m, v;
  std::vector<Eigen::Map<const Vector>> g;
  std::vector<bool> is_weight;
  params.for_each_tensor([&](const std::string&, Eigen::Map<Vector> t, bool w) {
    p.push_back(t);
    is_weight.push_back(w);
  });
  state.m.for_each_tensor([&](const std::string&, Eigen::Map<Vector> t, bool) { m.push_back(t); });
  state.v.for_each_tensor([&](const std::string&, Eigen::Map<Vector> t, bool) { v.push_back(t); });
  grads.for_each_tensor([&](const std::string&, Eigen::Map<const Vector> t, bool) { g.push_back(t); });
  emg2kin::detail::require(p.size() == g.size() && p.size() == m.size(), ErrorCode::ShapeMismatch,
                           "adam_step: parameter/gradient structure mismatch");
  for (std::size_t k = 0; k < p.size(); ++k) {
    emg2kin::detail::require(p[k].size() == g[k].size(), ErrorCode::ShapeMismatch, "adam_step: tensor size mismatch");
    Vector grad = g[k];
    if (is_weight[k] && l2_strength != 0.0) grad += l2_strength * p[k];
    m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * grad;
    v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * grad.cwiseAbs2();
    p[k].array() -= lr * (m[k].array() / bc1) / ((v[k].array() / bc2).sqrt() + state.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Training loop

enum class StopReason { patience, max_epochs };

inline std::string_view to_string(StopReason r) { return r == StopReason::patience ? "patience" : "max_epochs"; }

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_fvu = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  StopReason stop_reason = StopReason::max_epochs;
  int best_epoch = -1;

  std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,train_loss,val_fvu,lr\n";
    char buf[128];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.validation_fvu, e.lr);
      os << buf;
    }
    return os.str();
  }
};

struct TrainedModel {
  NetworkSpec spec;
  NetworkParams params;
  bool trained = false;
};

struct TrainResult {
  TrainedModel model;
  TrainHistory history;
};

/// Raised when the training loss becomes non-finite; carries the history up
/// to the failing epoch.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainHistory history)
      : Error(ErrorCode::DivergedLoss, what), history_(std::move(history)) {}
  const TrainHistory& history() const { return history_; }

 private:
  TrainHistory history_;
};

/// Mean over joints of the fraction of unexplained variance, each joint
/// pooled over every timestep of every validation sequence (eval mode).
/// Joints whose pooled truth is constant are left out of the mean.
inline double validation_fvu(const NetworkSpec& spec, const NetworkParams& params, const std::vector<FeatureSequence>& seqs) {
  emg2kin::detail::require(!seqs.empty(), ErrorCode::EmptyDataset, "no validation sequences");
  std::vector<const FeatureSequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  const auto batch = network::make_batch(ptrs, true);
  const Matrix pred = network::forward_batch(spec, params, batch, network::Mode::eval);
  const auto n_valid = static_cast<std::size_t>(batch.mask.sum());
  double total = 0.0;
  int counted = 0;
  for (Eigen::Index j = 0; j < pred.rows(); ++j) {
    std::vector<double> p, t;
    p.reserve(n_valid);
    t.reserve(n_valid);
    for (Eigen::Index c = 0; c < pred.cols(); ++c)
      if (batch.mask(c) != 0.0) {
        p.push_back(pred(j, c));
        t.push_back(batch.targets(j, c));
      }
    try {
      total += metrics::fvu(p, t);
      ++counted;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ConstantTruth) throw;
    }
  }
  if (counted == 0) throw Error(ErrorCode::ConstantTruth, "every validation joint has constant ground truth");
  return total / counted;
}

using ValidationEvaluator = std::function<double(const NetworkParams&, int epoch)>;

struct TrainOptions {
  std::optional<NetworkParams> initial_params;
  ValidationEvaluator evaluator;  // defaults to validation_fvu on the validation set
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Adam with global-norm clipping, piecewise LR decay, shuffled mini-batches
/// of padded sequences and early stopping on validation FVU. Returns the
/// parameters of the best validation epoch.
inline TrainResult train(const NetworkSpec& spec, const std::vector<FeatureSequence>& train_set,
                         const std::vector<FeatureSequence>& validation_set, const TrainConfig& config,
                         const TrainOptions& options = {}) {
  config.validate();
  spec.validate();
  emg2kin::detail::require(!train_set.empty(), ErrorCode::EmptyDataset, "training set is empty");
  emg2kin::detail::require(!validation_set.empty() || options.evaluator, ErrorCode::EmptyDataset,
                           "validation set is empty");

  TrainResult result;
  result.model.spec = spec;
  NetworkParams params = options.initial_params
                             ? *options.initial_params
                             : network::init_params(spec, emg2kin::detail::derive_seed(config.seed, 0x1A17));
  result.model.params = params;
  if (config.max_epochs == 0) return result;

  ValidationEvaluator evaluate = options.evaluator;
  if (!evaluate)
    evaluate = [&](const NetworkParams& p, int) { return validation_fvu(spec, p, validation_set); };

  AdamState adam = AdamState::for_params(params);
  std::vector<std::size_t> order(train_set.size());
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  auto& history = result.history;
  history.stop_reason = StopReason::max_epochs;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = config.learning_rate(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(emg2kin::detail::derive_seed(config.seed, 0x5EED, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const FeatureSequence*> members;
      for (std::size_t k = start; k < end; ++k) members.push_back(&train_set[order[k]]);
      const auto batch = network::make_batch(members, true);
      const std::uint64_t drop_seed =
          emg2kin::detail::derive_seed(config.seed, 0xD0, static_cast<std::uint64_t>(epoch), n_batches);
      network::LossAndGrad lg;
      try {
        lg = network::backward_batch(spec, params, batch, drop_seed);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteActivation) throw;
        throw TrainingDiverged("non-finite activations at epoch " + std::to_string(epoch), history);
      }
      if (!std::isfinite(lg.loss))
        throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch), history);
      adam_step(adam, params, clip_gradients(std::move(lg.grads), config.gradient_threshold), lr, config.l2_strength);
      if (!params.all_finite())
        throw TrainingDiverged("non-finite parameters at epoch " + std::to_string(epoch), history);
      loss_sum += lg.loss;
      ++n_batches;
    }

    double val = std::numeric_limits<double>::infinity();
    try {
      val = evaluate(params, epoch);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteActivation) throw;
    }
    if (!std::isfinite(val))
      throw TrainingDiverged("non-finite validation error at epoch " + std::to_string(epoch), history);
    history.epochs.push_back({epoch, loss_sum / static_cast<double>(n_batches), val, lr});
    if (options.on_epoch) options.on_epoch(history.epochs.back());

    if (val < best) {
      best = val;
      since_best = 0;
      history.best_epoch = epoch;
      result.model.params = params;
    } else {
      ++since_best;
    }
    if (!config.early_stopping) {
      // Probe runs keep the final parameters.
      history.best_epoch = epoch;
      result.model.params = params;
    } else if (since_best >= config.patience) {
      history.stop_reason = StopReason::patience;
      break;
    }
  }
  result.model.trained = true;
  return result;
}

}  // namespace emg2kin::training

#endif  // EMG2KIN_TRAINING_HPP
