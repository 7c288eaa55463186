// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "core/tensor.hpp"

namespace smoe {

// Scalar objective re-evaluated from scratch on every call. Any randomness
// inside must be re-seeded per call so that probes see the same function.
using ScalarFn = std::function<Tensor()>;

// Largest |analytic - numeric| / (|numeric| + 1e-8) over the probed elements
// of the leaf `x`, numeric from the fourth-order central stencil.
// The analytic gradient comes from one taped evaluation of `f`; `x` must require grad.
double finite_diff_check(const ScalarFn& f, Tensor x, double h = 1e-4);

// Same, probing only the listed flat indices of `x`.
double finite_diff_check(const ScalarFn& f, Tensor x, const std::vector<std::size_t>& probe,
                         double h = 1e-4);

// Checks several leaves against one analytic pass; `per_tensor` elements are
// sampled per leaf with a seeded stream (all elements when the leaf is small).
double finite_diff_check_many(const ScalarFn& f, const std::vector<Tensor>& leaves,
                              std::size_t per_tensor, std::uint64_t seed, double h = 1e-4);

struct FiniteDiffReport {
    double max_error = 0.0;  // worst accepted (or best failing) error over all probes
    std::size_t probes = 0;
    std::size_t refined = 0;  // probes that needed a step after the first
};

// As finite_diff_check_many, for piecewise-smooth objectives: a probe whose
// error exceeds `tolerance` is re-measured with each later entry of `steps`,
// since a stencil straddling a kink is wrong at one step but not the next.
FiniteDiffReport finite_diff_check_refined(const ScalarFn& f, const std::vector<Tensor>& leaves,
                                           std::size_t per_tensor, std::uint64_t seed, double tolerance,
                                           const std::vector<double>& steps = {1e-4, 1e-5, 1e-6});

}  // namespace smoe
