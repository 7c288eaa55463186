// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <json.hpp>

#include "data/synth.hpp"
#include "model/stereo.hpp"

namespace smoe {

// One row per (sample, view, layer). Experts are the most frequently
// selected index, -1 when the layer was dropped; gates are the mean top gate.
struct TraceRow {
    std::size_t sample = 0;
    std::size_t view = 0;  // 0 left, 1 right
    std::size_t layer = 0;
    double lora_mask = 0.0;
    double adapter_mask = 0.0;
    long lora_expert = -1;
    long adapter_expert = -1;
    double lora_gate = 0.0;
    double adapter_gate = 0.0;
};

struct MetricsReport {
    std::size_t samples = 0;
    std::size_t valid_pixels = 0;
    double epe = 0.0;
    double bad1 = 0.0, bad2 = 0.0, bad3 = 0.0;
    double kept_ratio_lora = 0.0;
    double kept_ratio_adapter = 0.0;
    double kept_ratio = 0.0;        // both families
    double activated_count = 0.0;   // mean over views of kept modules
    std::uint64_t macs_per_view = 0;  // mean, rounded down; backbone and head of one view
    // [layer][expert]: share of a view's rows sent to the expert times the
    // layer mask, averaged over views. Rows sum to the layer's kept ratio.
    std::vector<std::vector<double>> lora_activation;
    std::vector<std::vector<double>> adapter_activation;
    std::vector<double> lora_kept_per_layer;
    std::vector<double> adapter_kept_per_layer;
};

// Test hook: replaces the model's final disparity for a sample.
using Predictor = std::function<Tensor(const data::StereoSample&)>;

struct EvalOptions {
    // Train mode samples soft Gumbel masks from `noise_seed` at `gumbel_temperature`.
    Mode mode = Mode::Infer;
    double gumbel_temperature = 0.5;
    std::uint64_t noise_seed = 0;
    Predictor predictor;
    std::vector<TraceRow>* traces = nullptr;
};

// Error statistics are pooled over all valid pixels.
MetricsReport evaluate(const StereoModel& model, const data::Dataset& dataset, const EvalOptions& options = {});

nlohmann::json report_to_json(const MetricsReport& report);
// metrics.json, metrics.csv and activation.csv under `dir`.
void write_report(const MetricsReport& report, const std::filesystem::path& dir);
void write_activation_csv(const MetricsReport& report, const std::filesystem::path& path);
void write_trace_csv(const std::vector<TraceRow>& rows, const std::filesystem::path& path);

}  // namespace smoe
