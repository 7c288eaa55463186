// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Random-dot stereograms with piecewise-constant integer disparity.
//
// Each sample is a stack of fronto-parallel layers: a full-frame background
// and `num_rects` rectangles, painted in ascending disparity so nearer layers
// occlude farther ones. Every layer carries its own smooth value-noise texture
// in left-view coordinates; the right view samples layer i at x + d_i. Left
// pixels whose surface is hidden (or out of frame) in the right view are
// marked invalid. Intensities are stored as 8-bit levels, so a dataset is
// byte-identical for identical (seed, params) on every platform.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace smoe::data {

struct SynthParams {
    std::size_t height = 32;
    std::size_t width = 64;
    std::size_t channels = 1;
    std::size_t disparity_min = 0;
    std::size_t disparity_max = 12;
    std::size_t num_rects = 3;
    std::size_t dot_size = 3;  // value-noise lattice spacing in pixels

    // Throws GenerationError for geometry the generator cannot honour.
    void validate() const;
};

struct StereoSample {
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<std::uint8_t> left, right;  // [C x H x W] levels, value = level / 255
    std::vector<std::uint8_t> disparity;    // [H x W] integer pixels
    std::vector<std::uint8_t> valid;        // [H x W] 0/1

    Tensor left_image() const;
    Tensor right_image() const;
    Tensor disparity_map() const;
    Tensor valid_mask() const;
    std::size_t valid_count() const;
};

struct Dataset {
    SynthParams params;
    std::uint64_t seed = 0;
    std::vector<StereoSample> samples;

    std::size_t size() const { return samples.size(); }
    Dataset subset(const std::vector<std::size_t>& indices) const;
};

StereoSample generate_sample(const SynthParams& params, std::uint64_t seed, std::size_t index);
Dataset generate(std::uint64_t seed, std::size_t count, const SynthParams& params);

// Seeded shuffle, then each side sorted ascending. train gets round(fraction * n).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split(std::size_t count, double train_fraction,
                                                                    std::uint64_t seed);

// Directory layout: index.json plus one flat binary record per sample.
void save(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load(const std::filesystem::path& dir);

std::uint32_t sample_checksum(const StereoSample& sample);

}  // namespace smoe::data
