// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "core/tensor.hpp"

namespace smoe {

struct AdamWSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// Decoupled weight decay Adam. Parameters without a grad are left untouched.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWSettings settings);

    void step(double lr);
    void zero_grad();
    std::size_t steps_taken() const { return t_; }

private:
    std::vector<Tensor> params_;
    AdamWSettings s_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

// Linear warm-up from peak/25 over the first `warmup_fraction` of the run,
// then linear decay to peak/1e4 at the last step.
double one_cycle_lr(std::size_t step, std::size_t total_steps, double peak, double warmup_fraction);

// Scales all grads so their joint L2 norm is at most `max_norm`; returns the
// norm before clipping. max_norm <= 0 only measures.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

}  // namespace smoe
