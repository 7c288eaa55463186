// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Siamese SMoE ViT feature extractor, single-level correlation volume and an
// iterative disparity head.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "model/block.hpp"

namespace smoe {

struct StereoConfig {
    std::size_t image_height = 32;
    std::size_t image_width = 64;
    std::size_t channels = 1;
    std::size_t patch = 8;
    std::size_t layers = 4;
    BlockConfig block;
    std::size_t feature_channels = 32;
    std::size_t d_max = 4;  // feature pixels
    std::size_t lookup_radius = 3;
    std::size_t iterations = 4;
    std::size_t update_hidden = 16;

    void validate() const;
    std::size_t padded_height() const;
    std::size_t padded_width() const;
    TokenGrid grid() const { return {padded_height() / patch, padded_width() / patch}; }
};

struct Backbone {
    Tensor patch_weight;  // [dim x C*p*p], frozen
    Tensor patch_bias;    // [dim], frozen
    Tensor cls_token;     // [1 x dim], frozen
    Tensor norm_gamma, norm_beta;
    std::vector<SMoEBlock> blocks;
};

struct DisparityHead {
    Tensor compress_w, compress_b;  // 1x1, dim -> C_f
    std::array<Tensor, 2> res_w, res_b;
    Tensor update1_w, update1_b;  // (taps + 1) -> hidden, 3x3
    Tensor update2_w, update2_b;  // hidden -> 1, 3x3, zero at init
};

struct StereoModel {
    StereoConfig config;
    Backbone backbone;
    DisparityHead head;
};

StereoModel make_stereo_model(const StereoConfig& config, std::uint64_t seed);

// Every tensor with a stable dotted name, frozen ones included.
std::vector<std::pair<std::string, Tensor>> named_tensors(StereoModel& model);
std::vector<Tensor> trainable_tensors(StereoModel& model);

struct ForwardOptions {
    Mode mode = Mode::Infer;
    double gumbel_temperature = 1.0;
    Rng* noise = nullptr;
    bool experts_enabled = true;
    // Per-layer mask overrides; empty or nullopt entries use the gates.
    std::vector<std::optional<double>> force_lora;
    std::vector<std::optional<double>> force_adapter;
};

// Reflect-pads an image [C x H x W] up to the patch grid and flattens it to
// patch rows [(H/p)(W/p) x C*p*p]. Constant, no gradient.
Tensor patchify(const Tensor& image, std::size_t patch, std::size_t padded_h, std::size_t padded_w);

// Fixed 2-D sinusoidal table [cells x dim]: first half encodes rows, second half columns.
Tensor positional_embedding(TokenGrid grid, std::size_t dim);

// Class token plus patch tokens through all blocks and the final norm: [1 + cells x dim].
Tensor encode_tokens(const StereoModel& model, const Tensor& image, const ForwardOptions& opts, GatingTrace& trace);

struct ViewFeatures {
    Tensor features;  // [C_f x H_f x W_f]
    GatingTrace trace;
};

ViewFeatures extract_view(const StereoModel& model, const Tensor& image, const ForwardOptions& opts);

// Coarse disparities in feature pixels, N_iter maps of [H_f x W_f].
std::vector<Tensor> refine_disparity(const DisparityHead& head, const StereoConfig& config, const Tensor& volume);

struct StereoOutput {
    std::vector<Tensor> disparities;  // input pixels, [H x W] each
    std::vector<Tensor> coarse;       // feature pixels
    Tensor volume;
    GatingTrace left_trace;
    GatingTrace right_trace;
};

// left/right: [C x H x W] at the configured image size.
StereoOutput stereo_forward(const StereoModel& model, const Tensor& left, const Tensor& right,
                            const ForwardOptions& opts);

}  // namespace smoe
