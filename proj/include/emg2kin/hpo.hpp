// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#ifndef EMG2KIN_HPO_HPP
#define EMG2KIN_HPO_HPP

#include "emg2kin/common.hpp"
#include "emg2kin/network.hpp"
#include "emg2kin/training.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

namespace emg2kin::hpo {

inline constexpr int kAxes = 4;
using UnitPoint = std::array<double, kAxes>;  // n_h, lr, grad threshold, l2

struct Hyperparameters {
  int n_h = 64;
  double initial_lr = 1e-3;
  double gradient_threshold = 1.0;
  double l2_strength = 0.0;
};

/// Box over the four tuned quantities. Learning rate and L2 are searched on a
/// log axis; n_h and the gradient threshold on a linear one.
struct SearchSpace {
  int n_h_min = 30;
  int n_h_max = 600;
  double lr_min = 1e-4, lr_max = 1e-1;
  double threshold_min = 0.2, threshold_max = 1.0;
  double l2_min = 1e-10, l2_max = 1e2;

  static SearchSpace for_kind(network::NetworkKind kind) {
    SearchSpace s;
    if (kind == network::NetworkKind::feedforward) s.n_h_max = 3000;
    return s;
  }

  /// n_h is relaxed to a continuous axis and rounded here.
  Hyperparameters decode(const UnitPoint& u) const {
    auto lin = [](double lo, double hi, double t) { return std::clamp(lo + std::clamp(t, 0.0, 1.0) * (hi - lo), lo, hi); };
    auto logs = [](double lo, double hi, double t) {
      if (!(t > 0.0)) return lo;  // exp(log(x)) is not always x
      if (t >= 1.0) return hi;
      return std::clamp(std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))), lo, hi);
    };
    Hyperparameters h;
    h.n_h = static_cast<int>(std::lround(lin(n_h_min, n_h_max, u[0])));
    h.initial_lr = logs(lr_min, lr_max, u[1]);
    h.gradient_threshold = lin(threshold_min, threshold_max, u[2]);
    h.l2_strength = logs(l2_min, l2_max, u[3]);
    return h;
  }

  UnitPoint encode(const Hyperparameters& h) const {
    return {(h.n_h - n_h_min) / double(n_h_max - n_h_min),
            std::log(h.initial_lr / lr_min) / std::log(lr_max / lr_min),
            (h.gradient_threshold - threshold_min) / (threshold_max - threshold_min),
            std::log(h.l2_strength / l2_min) / std::log(l2_max / l2_min)};
  }

  bool contains(const Hyperparameters& h) const {
    return h.n_h >= n_h_min && h.n_h <= n_h_max && h.initial_lr >= lr_min && h.initial_lr <= lr_max &&
           h.gradient_threshold >= threshold_min && h.gradient_threshold <= threshold_max &&
           h.l2_strength >= l2_min && h.l2_strength <= l2_max;
  }

  void validate() const {
    using emg2kin::detail::require;
    require(n_h_min >= 1 && n_h_min < n_h_max, ErrorCode::InvalidConfig, "bad n_h range");
    require(lr_min > 0 && lr_min < lr_max, ErrorCode::InvalidConfig, "bad learning-rate range");
    require(threshold_min > 0 && threshold_min < threshold_max, ErrorCode::InvalidConfig, "bad threshold range");
    require(l2_min > 0 && l2_min < l2_max, ErrorCode::InvalidConfig, "bad l2 range");
  }
};

struct HpoTrialRecord {
  int trial_index = 0;
  Hyperparameters candidate;
  UnitPoint unit{};
  double cost = std::numeric_limits<double>::infinity();
  bool failed = false;
  std::uint64_t seed = 0;
  double wall_time_s = 0.0;
};

inline std::string csv_header() { return "trial_index,n_h,lr,grad_threshold,l2,cost,failed,seed"; }

inline std::string csv_row(const HpoTrialRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.trial_index << ',' << r.candidate.n_h << ',' << r.candidate.initial_lr << ','
     << r.candidate.gradient_threshold << ',' << r.candidate.l2_strength << ',' << r.cost << ','
     << (r.failed ? 1 : 0) << ',' << r.seed;
  return os.str();
}

inline std::string to_csv(const std::vector<HpoTrialRecord>& records) {
  std::string out = csv_header() + "\n";
  for (const auto& r : records) out += csv_row(r) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian-process surrogate

namespace detail {

// Minimizes f over R^n with the standard reflection/expansion/contraction/
// shrink moves. Small and derivative-free; used only for GP hyperparameters.
inline Vector nelder_mead(const std::function<double(const Vector&)>& f, Vector x0, double step, int max_evals) {
  const Eigen::Index n = x0.size();
  std::vector<Vector> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> val(pts.size());
  for (Eigen::Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)](i) += step;
  int evals = 0;
  for (std::size_t i = 0; i < pts.size(); ++i, ++evals) val[i] = f(pts[i]);
  std::vector<std::size_t> order(pts.size());
  while (evals < max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    if (std::abs(val[worst] - val[best]) < 1e-9 * (1 + std::abs(val[best]))) break;
    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);
    const Vector reflected = centroid + (centroid - pts[worst]);
    const double fr = f(reflected);
    ++evals;
    if (fr < val[best]) {
      const Vector expanded = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = f(expanded);
      ++evals;
      if (fe < fr) {
        pts[worst] = expanded, val[worst] = fe;
      } else {
        pts[worst] = reflected, val[worst] = fr;
      }
    } else if (fr < val[second]) {
      pts[worst] = reflected, val[worst] = fr;
    } else {
      const Vector contracted = centroid + 0.5 * (pts[worst] - centroid);
      const double fc = f(contracted);
      ++evals;
      if (fc < val[worst]) {
        pts[worst] = contracted, val[worst] = fc;
      } else {
        for (std::size_t i = 0; i < pts.size(); ++i) {
          if (i == best) continue;
          pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
          val[i] = f(pts[i]);
          ++evals;
        }
      }
    }
  }
  return pts[static_cast<std::size_t>(std::min_element(val.begin(), val.end()) - val.begin())];
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace detail

/// Zero-mean GP on standardized targets with an ARD squared-exponential
/// kernel. Hyperparameters are fitted by maximizing the log marginal
/// likelihood; the noise variance never drops below `noise_floor`.
class GaussianProcess {
 public:
  static constexpr double noise_floor = 1e-6;

  struct Hyper {
    std::array<double, kAxes> length{0.3, 0.3, 0.3, 0.3};
    double signal_var = 1.0;
    double noise_var = 1e-3;
  };

  void fit(const std::vector<UnitPoint>& x, const std::vector<double>& y, const Hyper* warm_start = nullptr) {
    emg2kin::detail::require(!x.empty() && x.size() == y.size(), ErrorCode::ShapeMismatch, "GP needs matched x and y");
    x_ = x;
    const double n = static_cast<double>(y.size());
    mean_ = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double ss = 0;
    for (double v : y) ss += (v - mean_) * (v - mean_);
    scale_ = std::sqrt(ss / n);
    if (!(scale_ > 1e-12)) scale_ = 1.0;
    y_.resize(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) y_(static_cast<Eigen::Index>(i)) = (y[i] - mean_) / scale_;

    auto objective = [&](const Vector& theta) {
      const Hyper h = unpack(theta);
      const double lml = log_marginal_likelihood(h);
      return std::isfinite(lml) ? -lml : 1e300;
    };
    Vector best_theta = pack(Hyper{});
    double best = objective(best_theta);
    std::vector<Vector> starts{best_theta};
    if (warm_start) starts.push_back(pack(*warm_start));
    for (const auto& s : starts) {
      const Vector theta = detail::nelder_mead(objective, s, 0.7, 250);
      const double v = objective(theta);
      if (v < best) best = v, best_theta = theta;
    }
    hyper_ = unpack(best_theta);
    factorize();
  }

  /// Posterior mean and standard deviation of the latent function, in the
  /// original target units.
  std::pair<Vector, Vector> predict(const std::vector<UnitPoint>& q) const {
    const Eigen::Index n = static_cast<Eigen::Index>(x_.size()), m = static_cast<Eigen::Index>(q.size());
    Matrix ks(n, m);
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index i = 0; i < n; ++i) ks(i, j) = kernel(hyper_, x_[static_cast<std::size_t>(i)], q[static_cast<std::size_t>(j)]);
    const Vector mu = ks.transpose() * alpha_;
    const Matrix v = chol_.matrixL().solve(ks);
    Vector sd(m);
    for (Eigen::Index j = 0; j < m; ++j) sd(j) = std::sqrt(std::max(hyper_.signal_var - v.col(j).squaredNorm(), 1e-12));
    return {(mu.array() * scale_ + mean_).matrix(), sd * scale_};
  }

  const Hyper& hyper() const { return hyper_; }

  double log_marginal_likelihood(const Hyper& h) const {
    const Matrix k = gram(h);
    Eigen::LLT<Matrix> llt(k);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Vector a = llt.solve(y_);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * y_.dot(a) - 0.5 * log_det - 0.5 * static_cast<double>(y_.size()) * std::log(2.0 * std::numbers::pi);
  }

 private:
  static double kernel(const Hyper& h, const UnitPoint& a, const UnitPoint& b) {
    double r2 = 0;
    for (int d = 0; d < kAxes; ++d) {
      const double t = (a[d] - b[d]) / h.length[d];
      r2 += t * t;
    }
    return h.signal_var * std::exp(-0.5 * r2);
  }

  Matrix gram(const Hyper& h) const {
    const Eigen::Index n = static_cast<Eigen::Index>(x_.size());
    Matrix k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j)
        k(i, j) = k(j, i) = kernel(h, x_[static_cast<std::size_t>(i)], x_[static_cast<std::size_t>(j)]);
    k.diagonal().array() += h.noise_var;
    return k;
  }

  // Log-space parameterization, box-clamped so the fit cannot wander into
  // degenerate kernels.
  static Vector pack(const Hyper& h) {
    Vector t(kAxes + 2);
    for (int d = 0; d < kAxes; ++d) t(d) = std::log(h.length[d]);
    t(kAxes) = std::log(h.signal_var);
    t(kAxes + 1) = std::log(h.noise_var);
    return t;
  }

  static Hyper unpack(const Vector& t) {
    Hyper h;
    for (int d = 0; d < kAxes; ++d) h.length[d] = std::exp(std::clamp(t(d), std::log(0.02), std::log(20.0)));
    h.signal_var = std::exp(std::clamp(t(kAxes), std::log(0.01), std::log(100.0)));
    h.noise_var = std::exp(std::clamp(t(kAxes + 1), std::log(noise_floor), std::log(1.0)));
    return h;
  }

  void factorize() {
    chol_.compute(gram(hyper_));
    if (chol_.info() != Eigen::Success) {
      hyper_.noise_var = std::max(hyper_.noise_var * 10, 1e-4);
      chol_.compute(gram(hyper_));
    }
    alpha_ = chol_.solve(y_);
  }

  std::vector<UnitPoint> x_;
  Vector y_;
  double mean_ = 0, scale_ = 1;
  Hyper hyper_;
  Eigen::LLT<Matrix> chol_;
  Vector alpha_;
};

/// Expected improvement for minimization, with an exploration jitter in
/// standardized units of the incumbent.
inline double expected_improvement(double mu, double sd, double best, double jitter) {
  if (!(sd > 0)) return 0.0;
  const double gap = best - mu - jitter;
  const double z = gap / sd;
  return gap * detail::normal_cdf(z) + sd * detail::normal_pdf(z);
}

// ---------------------------------------------------------------------------
// Optimizer

enum class Strategy { gp_expected_improvement, random_search };

/// Returns the cost of a candidate. Throwing an Error with DivergedLoss or
/// returning a non-finite value marks the trial failed.
using Objective = std::function<double(const Hyperparameters&, std::uint64_t seed)>;

struct OptimizeOptions {
  int budget = 100;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::gp_expected_improvement;
  int n_initial = 10;
  double ei_jitter = 0.01;
  int n_candidates = 2000;
  std::function<void(const HpoTrialRecord&)> on_trial;  // called in trial order
};

inline std::vector<UnitPoint> latin_hypercube(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<UnitPoint> pts(static_cast<std::size_t>(n));
  std::vector<int> strata(static_cast<std::size_t>(n));
  for (int d = 0; d < kAxes; ++d) {
    std::iota(strata.begin(), strata.end(), 0);
    std::shuffle(strata.begin(), strata.end(), rng);
    for (int i = 0; i < n; ++i) pts[static_cast<std::size_t>(i)][d] = (strata[static_cast<std::size_t>(i)] + unif(rng)) / n;
  }
  return pts;
}

namespace detail {

inline UnitPoint random_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  UnitPoint p;
  for (auto& v : p) v = unif(rng);
  return p;
}

// Maximizes EI over the unit cube: dense random candidates plus jittered
// copies of the best observations, then a shrinking coordinate search from
// the few most promising ones.
inline UnitPoint maximize_ei(const GaussianProcess& gp, const std::vector<UnitPoint>& observed,
                             const std::vector<double>& costs, double jitter, int n_candidates, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nudge(0.0, 0.05);
  const double best = *std::min_element(costs.begin(), costs.end());
  // EI jitter is specified in standardized units.
  double spread = 0;
  {
    const double m = std::accumulate(costs.begin(), costs.end(), 0.0) / costs.size();
    for (double c : costs) spread += (c - m) * (c - m);
    spread = std::sqrt(spread / costs.size());
    if (!(spread > 1e-12)) spread = 1.0;
  }
  const double xi = jitter * spread;

  std::vector<UnitPoint> cand;
  cand.reserve(static_cast<std::size_t>(n_candidates) + 100);
  for (int i = 0; i < n_candidates; ++i) cand.push_back(random_point(rng));
  std::vector<std::size_t> order(costs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return costs[a] < costs[b]; });
  for (std::size_t k = 0; k < std::min<std::size_t>(5, order.size()); ++k)
    for (int j = 0; j < 20; ++j) {
      UnitPoint p = observed[order[k]];
      for (auto& v : p) v = std::clamp(v + nudge(rng), 0.0, 1.0);
      cand.push_back(p);
    }

  auto score = [&](const std::vector<UnitPoint>& pts) {
    const auto [mu, sd] = gp.predict(pts);
    std::vector<double> ei(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      ei[i] = expected_improvement(mu(static_cast<Eigen::Index>(i)), sd(static_cast<Eigen::Index>(i)), best, xi);
    return ei;
  };
  const auto ei = score(cand);
  std::vector<std::size_t> idx(cand.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t n_refine = std::min<std::size_t>(5, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_refine), idx.end(),
                    [&](std::size_t a, std::size_t b) { return ei[a] > ei[b]; });

  UnitPoint winner = cand[idx[0]];
  double winner_ei = ei[idx[0]];
  for (std::size_t r = 0; r < n_refine; ++r) {
    UnitPoint x = cand[idx[r]];
    double fx = ei[idx[r]];
    for (double step = 0.05; step > 1e-3; step *= 0.5) {
      bool moved = true;
      while (moved) {
        moved = false;
        std::vector<UnitPoint> probes;
        for (int d = 0; d < kAxes; ++d)
          for (double sgn : {-1.0, 1.0}) {
            UnitPoint p = x;
            p[d] = std::clamp(p[d] + sgn * step, 0.0, 1.0);
            probes.push_back(p);
          }
        const auto pe = score(probes);
        const auto it = std::max_element(pe.begin(), pe.end());
        if (*it > fx) {
          fx = *it;
          x = probes[static_cast<std::size_t>(it - pe.begin())];
          moved = true;
        }
      }
    }
    if (fx > winner_ei) winner_ei = fx, winner = x;
  }
  return winner;
}

}  // namespace detail

/// Sequential optimization loop. Proposals depend only on the seed and the
/// results so far, never on the budget, so a longer run extends a shorter
/// one. Records come back sorted by cost, failed trials last.
inline std::vector<HpoTrialRecord> optimize(const SearchSpace& space, const Objective& objective,
                                            const OptimizeOptions& opt = {}) {
  using emg2kin::detail::derive_seed;
  using emg2kin::detail::require;
  space.validate();
  require(opt.budget >= 1, ErrorCode::InvalidConfig, "budget must be >= 1");
  require(opt.n_initial >= 1, ErrorCode::InvalidConfig, "n_initial must be >= 1");

  const auto design = latin_hypercube(opt.n_initial, derive_seed(opt.seed, 0x1A5));
  std::vector<HpoTrialRecord> records;
  std::vector<UnitPoint> ok_x;
  std::vector<double> ok_y;
  GaussianProcess gp;
  std::optional<GaussianProcess::Hyper> last_hyper;

  for (int k = 0; k < opt.budget; ++k) {
    UnitPoint u;
    const std::uint64_t propose_seed = derive_seed(opt.seed, 0x9E0, static_cast<std::uint64_t>(k));
    if (opt.strategy == Strategy::random_search) {
      std::mt19937_64 rng(propose_seed);
      u = detail::random_point(rng);
    } else if (k < opt.n_initial) {
      u = design[static_cast<std::size_t>(k)];
    } else if (ok_x.size() < 2) {
      std::mt19937_64 rng(propose_seed);
      u = detail::random_point(rng);
    } else {
      gp.fit(ok_x, ok_y, last_hyper ? &*last_hyper : nullptr);
      last_hyper = gp.hyper();
      u = detail::maximize_ei(gp, ok_x, ok_y, opt.ei_jitter, opt.n_candidates, propose_seed);
    }

    HpoTrialRecord rec;
    rec.trial_index = k;
    rec.unit = u;
    rec.candidate = space.decode(u);
    rec.seed = derive_seed(opt.seed, 0x7A1, static_cast<std::uint64_t>(k));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      rec.cost = objective(rec.candidate, rec.seed);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DivergedLoss) throw;
      rec.cost = std::numeric_limits<double>::infinity();
    }
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.failed = !std::isfinite(rec.cost);
    if (rec.failed) {
      rec.cost = std::numeric_limits<double>::infinity();
    } else {
      ok_x.push_back(u);
      ok_y.push_back(rec.cost);
    }
    if (opt.on_trial) opt.on_trial(rec);
    records.push_back(rec);
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const HpoTrialRecord& a, const HpoTrialRecord& b) { return a.cost < b.cost; });
  return records;
}

// ---------------------------------------------------------------------------
// Probe training

/// Short probe: three epochs with early stopping off; the cost is the
/// validation FVU of the final parameters. Divergence maps to +inf.
inline double evaluate_candidate(const Hyperparameters& h, network::NetworkKind kind, int n_layers,
                                 const std::vector<features::FeatureSequence>& train_set,
                                 const std::vector<features::FeatureSequence>& val_set, std::uint64_t seed,
                                 training::TrainConfig base = {}) {
  const int input_dim = train_set.empty() ? features::kFeatureDim : static_cast<int>(train_set.front().features.cols());
  const auto spec = kind == network::NetworkKind::lstm ? network::NetworkSpec::lstm(n_layers, h.n_h, input_dim)
                                                       : network::NetworkSpec::feedforward(n_layers, h.n_h, input_dim);
  base.initial_lr = h.initial_lr;
  base.gradient_threshold = h.gradient_threshold;
  base.l2_strength = h.l2_strength;
  base.max_epochs = 3;
  base.early_stopping = false;
  base.seed = seed;
  try {
    const auto r = training::train(spec, train_set, val_set, base);
    const double cost = r.history.epochs.empty() ? std::numeric_limits<double>::infinity()
                                                 : r.history.epochs.back().validation_fvu;
    return std::isfinite(cost) ? cost : std::numeric_limits<double>::infinity();
  } catch (const training::TrainingDiverged&) {
    return std::numeric_limits<double>::infinity();
  }
}

inline Objective probe_objective(network::NetworkKind kind, int n_layers,
                                 const std::vector<features::FeatureSequence>& train_set,
                                 const std::vector<features::FeatureSequence>& val_set,
                                 training::TrainConfig base = {}) {
  return [=, &train_set, &val_set](const Hyperparameters& h, std::uint64_t seed) {
    return evaluate_candidate(h, kind, n_layers, train_set, val_set, seed, base);
  };
}

}  // namespace emg2kin::hpo

#endif  // EMG2KIN_HPO_HPP
