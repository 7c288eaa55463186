// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "data/synth.hpp"
#include "model/losses.hpp"
#include "model/stereo.hpp"

namespace smoe {

struct TrainSettings {
    std::size_t steps = 2000;
    std::size_t batch = 8;
    double learning_rate = 2e-3;
    double weight_decay = 1e-4;
    double warmup_fraction = 0.01;
    double grad_clip = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double gumbel_tau_start = 1.0;
    double gumbel_tau_end = 0.5;
};

struct PretrainSettings {
    std::size_t steps = 200;
    double mask_ratio = 0.4;
    double learning_rate = 1e-3;
};

struct RunConfig {
    StereoConfig model;
    loss::LossWeights loss;
    loss::BalanceVariant balance_variant = loss::BalanceVariant::Variance;
    bool experts_enabled = true;
    TrainSettings train;
    PretrainSettings pretrain;
    data::SynthParams data;  // height/width/channels mirror the model image
    std::size_t dataset_size = 8000;
    double train_fraction = 0.8;
    std::uint64_t seed = 1;        // trainable and frozen initialisation
    std::uint64_t data_seed = 2;   // dataset generation, split and batch order
    std::uint64_t noise_seed = 3;  // Gumbel noise
    std::string backbone_checkpoint;  // optional pretrained backbone weights

    void validate() const;
};

// Flat JSON object; unknown keys and wrong types raise ConfigError.
nlohmann::json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
void save_config(const RunConfig& config, const std::string& path);

}  // namespace smoe
