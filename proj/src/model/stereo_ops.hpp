// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops specific to the disparity head.

#pragma once

#include <cstddef>

#include "core/tensor.hpp"

namespace smoe::stereo {

inline constexpr double kOutOfImage = -1e4;

// vol[y, x, d] = <left(:, y, x), right(:, y, x - d)> / sqrt(C) for d < d_max,
// kOutOfImage where x - d < 0. Features are [C x H x W]; result is [H x W x d_max].
Tensor correlation(const Tensor& left, const Tensor& right, std::size_t d_max);

// Linear interpolation of `volume` [H x W x D] along d at disp(y, x) + o for
// o in [-radius, radius]; samples outside [0, D-1] read 0. disp is [H x W].
// Result is channel-first [(2 radius + 1) x H x W].
Tensor lookup(const Tensor& volume, const Tensor& disp, std::size_t radius);

// sum_d d * volume[y, x, d] over the last axis: [H x W x D] -> [H x W].
Tensor expected_index(const Tensor& volume);

// Bilinear resize of a [h x w] map with half-pixel centres, edges clamped.
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

// x: [C x ...], bias: [C], added to every element of channel c.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

}  // namespace smoe::stereo
