// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

// In-memory walk through the library: synthesize one participant, build
// features, train a small LSTM and score it with and without input noise.
//
//   synthetic_quickstart [epochs] [seed]

#include "emg2kin/augment.hpp"
#include "emg2kin/data_ingest.hpp"
#include "emg2kin/evaluation.hpp"
#include "emg2kin/preprocess.hpp"
#include "emg2kin/training.hpp"

#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
  using namespace emg2kin;
  const int epochs = argc > 1 ? std::atoi(argv[1]) : 5;
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 0;

  data::SyntheticConfig sc;
  sc.seed = seed;
  const auto trials = data::generate_synthetic_dataset(sc);
  const auto prep = preprocess::prepare_participant(trials);
  std::printf("tasks: %zu train, %zu validation, %zu test; PCA keeps %.3f of variance\n",
              prep.sequences.train.size(), prep.sequences.validation.size(), prep.sequences.test.size(),
              prep.pca.retained_fraction());

  // A lighter augmentation than the default keeps this sample under a minute.
  augment::AugmentationConfig ac;
  ac.n_white = 5;
  ac.n_colored = 5;
  ac.seed = detail::derive_seed(seed, 1);
  const auto train_set =
      preprocess::with_normalized_targets(augment::augment_training_set(prep.sequences.train, ac), prep.target_scale);
  const auto val_set = preprocess::with_normalized_targets(prep.sequences.validation, prep.target_scale);

  training::TrainConfig tc;
  tc.max_epochs = epochs;
  tc.seed = seed;
  training::TrainOptions opts;
  opts.on_epoch = [](const training::EpochRecord& e) {
    std::printf("epoch %2d  loss %.4f  validation FVU %.4f\n", e.epoch, e.train_loss, e.validation_fvu);
  };
  const auto result = training::train(network::NetworkSpec::lstm(1, 64, features::kFeatureDim), train_set, val_set, tc, opts);

  const auto model = result.model;
  const auto ts = prep.target_scale;
  evaluation::Predictor predict = [model, ts](const Matrix& x) {
    return ts.denormalize(network::forward(model.spec, model.params, x, network::Mode::eval));
  };
  evaluation::SweepConfig cfg;
  cfg.levels_pct = {0.0, 30.0};
  cfg.seed = seed;
  cfg.scale = evaluation::KinematicScale::from_zscore(prep.zscore);
  const auto report = evaluation::robustness_sweep(predict, prep.sequences.test, cfg);
  for (const auto& [key, s] : report.aggregate(evaluation::Metric::rho, {evaluation::Axis::level})) {
    const auto f = report.aggregate(evaluation::Metric::fvu, {evaluation::Axis::level}).at(key);
    std::printf("noise %4.0f%%  median rho %.3f (IQR %.3f)  median FVU %.3f\n", key[0], s.median, s.iqr(), f.median);
  }
  return 0;
}
