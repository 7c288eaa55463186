// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace smoe::init {

// U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), trainable.
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng);

// Frozen [rows x cols] matrix with orthonormal rows (rows <= cols) or
// orthonormal columns (rows > cols), scaled by `gain`.
Tensor orthogonal(std::size_t rows, std::size_t cols, Rng& rng, double gain = 1.0);

// Frozen N(0, std^2) values.
Tensor normal(Shape shape, double std, Rng& rng);

}  // namespace smoe::init
