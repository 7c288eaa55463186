// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "harness/config.hpp"
#include "harness/evaluate.hpp"
#include "harness/train.hpp"

namespace smoe {

struct SweepRow {
    double gamma = 0.0;
    double epe = 0.0;
    double kept_ratio_lora = 0.0;
    double kept_ratio_adapter = 0.0;
    double activated_count = 0.0;
};

struct SweepOptions {
    const data::Dataset* source = nullptr;  // default: generate from data_seed
    std::filesystem::path out_dir;          // per-gamma checkpoints and logs when set
    std::function<void(double gamma, const StepLog&)> on_step;
};

// One fresh train + evaluate per gamma with every seed shared; rows ascend in gamma.
std::vector<SweepRow> sweep_gamma(const RunConfig& base, std::vector<double> gammas, const SweepOptions& options = {});

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

struct PretrainLog {
    std::size_t step = 0;
    double loss = 0.0;
};

// Masked-patch reconstruction with the experts off: a random subset of patches
// is blanked and a linear decoder predicts their pixels from the final tokens.
// Every backbone weight is trained, then frozen again.
std::vector<PretrainLog> pretrain_backbone(StereoModel& model, const RunConfig& config,
                                           const data::Dataset& images);

}  // namespace smoe
