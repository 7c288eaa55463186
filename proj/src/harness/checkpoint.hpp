// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk layout, all integers little-endian:
//   "SMOE1" | u32 manifest length | manifest JSON (UTF-8) | f32 payload | u32 CRC32(payload)
// The manifest lists {name, shape, offset} per tensor, offset counted in
// floats, plus the run config that built the model.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "harness/config.hpp"
#include "model/stereo.hpp"

namespace smoe {

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct CheckpointFile {
    nlohmann::json config;
    std::vector<StoredTensor> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
// Throws IoError when unreadable, CorruptCheckpointError on bad magic, CRC or layout.
CheckpointFile read_checkpoint(const std::filesystem::path& path);

// Rounds every weight of the model to the nearest float in place, so an
// in-memory model and its reloaded checkpoint hold identical values.
void round_to_f32(StereoModel& model);

void save_model(const std::filesystem::path& path, StereoModel& model, const RunConfig& config);

struct LoadedModel {
    RunConfig config;
    StereoModel model;
};

LoadedModel load_model(const std::filesystem::path& path);

// Copies the frozen "backbone." tensors of a checkpoint into `model`.
// Returns how many tensors were replaced.
std::size_t load_backbone_weights(StereoModel& model, const std::filesystem::path& path);

// Builds the model for a config: seeded init, optional pretrained backbone,
// then f32 rounding.
StereoModel build_model(const RunConfig& config);

}  // namespace smoe
