// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

#include "emg2kin/hpo.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace emg2kin::hpo {
namespace {

using network::NetworkKind;

// Quadratic bowl over the learning-rate and gradient-threshold axes, in unit
// coordinates; the other two axes are inert.
struct Bowl {
  SearchSpace space;
  double lr_star = 0.3, threshold_star = 0.7;
  double operator()(const Hyperparameters& h, std::uint64_t) const {
    const auto u = space.encode(h);
    return (u[1] - lr_star) * (u[1] - lr_star) + (u[2] - threshold_star) * (u[2] - threshold_star);
  }
};

double best_cost(const std::vector<HpoTrialRecord>& r) { return r.front().cost; }

TEST(SearchSpace, BoundsPerKind) {
  const auto lstm = SearchSpace::for_kind(NetworkKind::lstm);
  EXPECT_EQ(lstm.n_h_min, 30);
  EXPECT_EQ(lstm.n_h_max, 600);
  EXPECT_EQ(lstm.lr_min, 1e-4);
  EXPECT_EQ(lstm.lr_max, 1e-1);
  EXPECT_EQ(lstm.threshold_min, 0.2);
  EXPECT_EQ(lstm.threshold_max, 1.0);
  EXPECT_EQ(lstm.l2_min, 1e-10);
  EXPECT_EQ(lstm.l2_max, 1e2);
  EXPECT_EQ(SearchSpace::for_kind(NetworkKind::feedforward).n_h_max, 3000);
}

TEST(SearchSpace, CornersDecodeToBounds) {
  const SearchSpace s;
  const auto lo = s.decode({0, 0, 0, 0});
  const auto hi = s.decode({1, 1, 1, 1});
  EXPECT_EQ(lo.n_h, 30);
  EXPECT_EQ(lo.initial_lr, 1e-4);
  EXPECT_EQ(lo.gradient_threshold, 0.2);
  EXPECT_EQ(lo.l2_strength, 1e-10);
  EXPECT_EQ(hi.n_h, 600);
  EXPECT_EQ(hi.initial_lr, 1e-1);
  EXPECT_EQ(hi.gradient_threshold, 1.0);
  EXPECT_EQ(hi.l2_strength, 1e2);
  EXPECT_TRUE(s.contains(s.decode({-3, 5, 2, -1})));
}

TEST(SearchSpace, LogAxesAreGeometric) {
  const SearchSpace s;
  const auto mid = s.decode({0.5, 0.5, 0.5, 0.5});
  EXPECT_NEAR(mid.initial_lr, std::sqrt(1e-4 * 1e-1), 1e-15);
  EXPECT_NEAR(mid.l2_strength, 1e-4, 1e-17);
  EXPECT_NEAR(mid.gradient_threshold, 0.6, 1e-15);
  EXPECT_EQ(mid.n_h, 315);
  const auto u = s.encode(mid);
  EXPECT_NEAR(u[1], 0.5, 1e-12);
  EXPECT_NEAR(u[3], 0.5, 1e-12);
}

TEST(LatinHypercube, OnePointPerStratum) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pts = latin_hypercube(10, seed);
    for (int d = 0; d < kAxes; ++d) {
      std::vector<int> hits(10, 0);
      for (const auto& p : pts) ++hits[static_cast<std::size_t>(std::floor(p[d] * 10))];
      for (int h : hits) EXPECT_EQ(h, 1);
    }
  }
}

TEST(ExpectedImprovement, ClosedFormValues) {
  EXPECT_NEAR(expected_improvement(0.0, 1.0, 0.0, 0.0), 1.0 / std::sqrt(2 * std::numbers::pi), 1e-15);
  EXPECT_EQ(expected_improvement(0.0, 0.0, 1.0, 0.0), 0.0);
  // Monte Carlo oracle: E[max(best - jitter - Y, 0)] for Y ~ N(mu, sd^2).
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  const double mu = 0.3, sd = 0.5, best = 0.4, jitter = 0.01;
  double acc = 0;
  const int draws = 400000;
  for (int i = 0; i < draws; ++i) acc += std::max(best - jitter - (mu + sd * n01(rng)), 0.0);
  EXPECT_NEAR(expected_improvement(mu, sd, best, jitter), acc / draws, 3e-3);
}

TEST(GaussianProcess, InterpolatesSmoothData) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(0, 1);
  std::vector<UnitPoint> x;
  std::vector<double> y;
  auto f = [](const UnitPoint& p) { return std::sin(3 * p[0]) + p[1] * p[1]; };
  for (int i = 0; i < 30; ++i) {
    UnitPoint p{unif(rng), unif(rng), unif(rng), unif(rng)};
    x.push_back(p);
    y.push_back(f(p));
  }
  GaussianProcess gp;
  gp.fit(x, y);
  EXPECT_GE(gp.hyper().noise_var, GaussianProcess::noise_floor);
  const auto [mu, sd] = gp.predict(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(mu(static_cast<Eigen::Index>(i)), y[i], 0.05);
  // Irrelevant axes should get long length scales.
  EXPECT_GT(gp.hyper().length[2], gp.hyper().length[0]);
  EXPECT_GT(gp.hyper().length[3], gp.hyper().length[0]);
  UnitPoint q{0.5, 0.5, 0.5, 0.5};
  const auto [mq, sq] = gp.predict({q});
  EXPECT_NEAR(mq(0), f(q), 0.1);
  EXPECT_GT(sq(0), 0.0);
}

TEST(GaussianProcess, ConstantTargetsStayFinite) {
  std::vector<UnitPoint> x{{0.1, 0.2, 0.3, 0.4}, {0.5, 0.5, 0.5, 0.5}, {0.9, 0.1, 0.2, 0.8}};
  GaussianProcess gp;
  gp.fit(x, {2.0, 2.0, 2.0});
  const auto [mu, sd] = gp.predict({{0.3, 0.3, 0.3, 0.3}});
  EXPECT_TRUE(std::isfinite(mu(0)));
  EXPECT_TRUE(std::isfinite(sd(0)));
}

TEST(Optimize, BudgetOneUsesDesign) {
  const Bowl bowl;
  OptimizeOptions opt;
  opt.budget = 1;
  opt.seed = 9;
  const auto r = optimize(bowl.space, std::cref(bowl), opt);
  ASSERT_EQ(r.size(), 1u);
  const auto design = latin_hypercube(10, emg2kin::detail::derive_seed(9, 0x1A5));
  EXPECT_EQ(r[0].unit, design[0]);
}

TEST(Optimize, FindsQuadraticOptimum) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Bowl bowl;
    OptimizeOptions opt;
    opt.budget = 30;
    opt.seed = seed;
    const auto r = optimize(bowl.space, std::cref(bowl), opt);
    EXPECT_LT(best_cost(r), 1e-2) << seed;
    for (std::size_t i = 1; i < r.size(); ++i) EXPECT_LE(r[i - 1].cost, r[i].cost);
  }
}

TEST(Optimize, SurrogateBeatsRandomSearch) {
  int gp_wins = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Bowl bowl{SearchSpace{}, 0.85, 0.15};
    OptimizeOptions opt;
    opt.budget = 25;
    opt.seed = seed;
    const double gp = best_cost(optimize(bowl.space, std::cref(bowl), opt));
    opt.strategy = Strategy::random_search;
    const double rnd = best_cost(optimize(bowl.space, std::cref(bowl), opt));
    gp_wins += gp < rnd;
  }
  EXPECT_GE(gp_wins, 4);
}

TEST(Optimize, ProposalsIndependentOfBudget) {
  const Bowl bowl;
  std::vector<HpoTrialRecord> short_run, long_run;
  OptimizeOptions opt;
  opt.seed = 4;
  opt.budget = 14;
  opt.on_trial = [&](const HpoTrialRecord& r) { short_run.push_back(r); };
  optimize(bowl.space, std::cref(bowl), opt);
  opt.budget = 18;
  opt.on_trial = [&](const HpoTrialRecord& r) { long_run.push_back(r); };
  optimize(bowl.space, std::cref(bowl), opt);
  for (std::size_t i = 0; i < short_run.size(); ++i) {
    EXPECT_EQ(short_run[i].unit, long_run[i].unit);
    EXPECT_EQ(short_run[i].cost, long_run[i].cost);
  }
}

TEST(Optimize, BestSoFarNonIncreasingInBudget) {
  const Bowl bowl{SearchSpace{}, 0.6, 0.4};
  double prev = std::numeric_limits<double>::infinity();
  for (int budget = 1; budget <= 20; budget += 3) {
    OptimizeOptions opt;
    opt.seed = 2;
    opt.budget = budget;
    const double b = best_cost(optimize(bowl.space, std::cref(bowl), opt));
    EXPECT_LE(b, prev) << budget;
    prev = b;
  }
}

TEST(Optimize, ThousandProposalsStayInBounds) {
  int proposals = 0;
  for (auto kind : {NetworkKind::lstm, NetworkKind::feedforward}) {
    const auto space = SearchSpace::for_kind(kind);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      OptimizeOptions opt;
      opt.seed = seed;
      opt.budget = 100;
      opt.n_candidates = 500;
      opt.on_trial = [&](const HpoTrialRecord& r) {
        ++proposals;
        EXPECT_TRUE(space.contains(r.candidate));
        for (double u : r.unit) EXPECT_TRUE(u >= 0.0 && u <= 1.0);
      };
      // A corner-seeking objective pushes proposals against the bounds.
      optimize(space, [&](const Hyperparameters& h, std::uint64_t) {
        const auto u = space.encode(h);
        return -(u[0] + u[1]) + u[2] - u[3];
      }, opt);
    }
  }
  EXPECT_EQ(proposals, 1000);
}

TEST(Optimize, AllTrialsFailing) {
  OptimizeOptions opt;
  opt.budget = 15;
  const auto r = optimize(SearchSpace{}, [](const Hyperparameters&, std::uint64_t) -> double {
    throw Error(ErrorCode::DivergedLoss, "always");
  }, opt);
  ASSERT_EQ(r.size(), 15u);
  for (const auto& rec : r) {
    EXPECT_TRUE(rec.failed);
    EXPECT_TRUE(std::isinf(rec.cost));
  }
}

TEST(Optimize, FailedRegionDoesNotDerailSearch) {
  const Bowl bowl;
  OptimizeOptions opt;
  opt.budget = 30;
  int failures = 0;
  const auto r = optimize(bowl.space, [&](const Hyperparameters& h, std::uint64_t s) {
    if (bowl.space.encode(h)[1] > 0.75) {
      ++failures;
      return std::numeric_limits<double>::quiet_NaN();
    }
    return bowl(h, s);
  }, opt);
  EXPECT_GT(failures, 0);
  EXPECT_LT(best_cost(r), 1e-2);
  EXPECT_TRUE(r.back().failed);
}

TEST(Optimize, OtherErrorsPropagate) {
  OptimizeOptions opt;
  opt.budget = 3;
  EXPECT_THROW(optimize(SearchSpace{}, [](const Hyperparameters&, std::uint64_t) -> double {
    throw Error(ErrorCode::Io, "disk");
  }, opt), Error);
  opt.budget = 0;
  EXPECT_THROW(optimize(SearchSpace{}, Bowl{}, opt), Error);
}

TEST(Log, CsvLayout) {
  HpoTrialRecord r;
  r.trial_index = 3;
  r.candidate = {120, 0.01, 0.5, 1e-3};
  r.cost = 0.25;
  r.seed = 77;
  const auto csv = to_csv({r});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "trial_index,n_h,lr,grad_threshold,l2,cost,failed,seed");
  EXPECT_NE(csv.find("3,120,0.01"), std::string::npos);
  EXPECT_NE(csv.find(",0.25,0,77"), std::string::npos);
}

// --------------------------------------------------------------- probing

std::vector<features::FeatureSequence> probe_sequences(int n, std::uint64_t seed, double target_scale = 1.0) {
  std::vector<features::FeatureSequence> out;
  const Matrix readout = testing::random_matrix(43, 18, 99, 0.2);
  for (int i = 0; i < n; ++i) {
    features::FeatureSequence s;
    s.features = testing::random_matrix(30, 43, seed + i);
    s.targets = target_scale * (s.features * readout);
    s.task_id = i + 1;
    out.push_back(std::move(s));
  }
  return out;
}

TEST(EvaluateCandidate, LayersShareUnitsEvenly) {
  EXPECT_EQ(network::NetworkSpec::lstm(3, 600).units_per_layer, (std::vector<int>{200, 200, 200}));
  EXPECT_EQ(network::NetworkSpec::lstm(2, 31).units_per_layer, (std::vector<int>{15, 15}));
}

TEST(EvaluateCandidate, DeterministicFiniteCost) {
  const auto tr = probe_sequences(6, 1), va = probe_sequences(2, 50);
  const Hyperparameters h{40, 0.01, 0.5, 1e-6};
  const double a = evaluate_candidate(h, NetworkKind::lstm, 2, tr, va, 11);
  const double b = evaluate_candidate(h, NetworkKind::lstm, 2, tr, va, 11);
  EXPECT_TRUE(std::isfinite(a));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, evaluate_candidate(h, NetworkKind::lstm, 2, tr, va, 12));
}

TEST(EvaluateCandidate, DivergenceBecomesSentinel) {
  const auto tr = probe_sequences(4, 1, 1e300), va = probe_sequences(2, 50);
  const Hyperparameters h{40, 1e-1, 1.0, 1e-6};
  EXPECT_TRUE(std::isinf(evaluate_candidate(h, NetworkKind::lstm, 1, tr, va, 1)));
  OptimizeOptions opt;
  opt.budget = 2;
  const auto r = optimize(SearchSpace{}, probe_objective(NetworkKind::feedforward, 1, tr, va), opt);
  for (const auto& rec : r) EXPECT_TRUE(rec.failed);
}

}  // namespace
}  // namespace emg2kin::hpo
