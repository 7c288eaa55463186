// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <vector>

#include "data/synth.hpp"
#include "harness/config.hpp"
#include "model/stereo.hpp"

namespace smoe {

struct DataSplits {
    data::Dataset train;
    data::Dataset eval;
};

// Generates `dataset_size` samples from data_seed (or uses `source` when given)
// and splits them with the same seed.
DataSplits make_splits(const RunConfig& config, const data::Dataset* source = nullptr);

struct StepLog {
    std::size_t step = 0;
    double disp = 0.0;
    double blc = 0.0;    // unweighted
    double usage = 0.0;  // unweighted
    double total = 0.0;
    double kept_ratio_lora = 0.0;  // mean soft mask over the batch
    double kept_ratio_adapter = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
};

struct TrainOptions {
    std::function<void(const StepLog&)> on_step;
};

// Optimises every trainable tensor (only the head when experts are disabled)
// on the weighted loss. Throws NumericError naming the step and components
// when the loss stops being finite. The model is rounded to f32 on return.
std::vector<StepLog> train_model(StereoModel& model, const RunConfig& config, const data::Dataset& train_set,
                                 const TrainOptions& options = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<StepLog>& log);

}  // namespace smoe
