// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The emg2kin Authors

// Convenience header pulling in the whole library.

#ifndef EMG2KIN_EMG2KIN_HPP
#define EMG2KIN_EMG2KIN_HPP

#include "emg2kin/augment.hpp"
#include "emg2kin/common.hpp"
#include "emg2kin/data_ingest.hpp"
#include "emg2kin/dsp.hpp"
#include "emg2kin/evaluation.hpp"
#include "emg2kin/features.hpp"
#include "emg2kin/hpo.hpp"
#include "emg2kin/metrics.hpp"
#include "emg2kin/network.hpp"
#include "emg2kin/pipeline.hpp"
#include "emg2kin/preprocess.hpp"
#include "emg2kin/training.hpp"

#endif  // EMG2KIN_EMG2KIN_HPP
