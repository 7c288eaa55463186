// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "harness/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace smoe {

AdamW::AdamW(std::vector<Tensor> params, AdamWSettings settings) : params_(std::move(params)), s_(settings) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto w = p.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = s_.beta1 * m[j] + (1.0 - s_.beta1) * g[j];
            v[j] = s_.beta2 * v[j] + (1.0 - s_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= lr * (mhat / (std::sqrt(vhat) + s_.eps) + s_.weight_decay * w[j]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.clear_grad();
}

double one_cycle_lr(std::size_t step, std::size_t total_steps, double peak, double warmup_fraction) {
    const double start = peak / 25.0;
    const double floor = peak / 1e4;
    if (total_steps <= 1) return peak;
    const double warm = std::max(1.0, std::round(warmup_fraction * static_cast<double>(total_steps)));
    const double s = static_cast<double>(step);
    if (s < warm) return start + (peak - start) * s / warm;
    const double span = static_cast<double>(total_steps - 1) - warm;
    if (span <= 0.0) return peak;
    const double frac = std::clamp((s - warm) / span, 0.0, 1.0);
    return peak + (floor - peak) * frac;
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        if (p.has_grad())
            for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / (norm + 1e-12);
        for (const auto& p : params) {
            if (!p.has_grad()) continue;
            // Grad storage is owned by the node; scale it in place.
            auto& g = *p.node()->grad;
            for (double& x : g) x *= f;
        }
    }
    return norm;
}

}  // namespace smoe
