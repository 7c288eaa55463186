// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <vector>

#include "core/tensor.hpp"
#include "model/block.hpp"

namespace smoe::loss {

enum class BalanceVariant {
    Variance,  // variance / mean
    Cv2,    // variance / mean^2
};

struct LossWeights {
    double lambda_balance = 1.0;
    double lambda_usage = 1.0;
    double beta = 0.9;
    double gamma = 0.6;

    // Throws ConfigError when a field leaves its range.
    void validate() const;
};

struct BalanceResult {
    Tensor value;             // scalar
    bool degenerate = false;  // some router had zero total gate mass and contributed 0
};

// Q for one routing call: gate mass per expert summed over rows, [experts].
Tensor router_mass(const Routing& routing);

// Sum over routers of var(Q) / mean(Q) (or / mean(Q)^2), population variance.
BalanceResult balance_loss(const std::vector<Tensor>& masses, BalanceVariant variant = BalanceVariant::Variance);

// Q per (layer, LoRA|Adapter) router: gate mass averaged over every routed row
// of every trace, then the sum above. Layers skipped in all traces have Q = 0 and set `degenerate`.
BalanceResult balance_loss(const std::vector<const GatingTrace*>& traces,
                           BalanceVariant variant = BalanceVariant::Variance);

// (mean_l M_L - gamma)^2 + (mean_l M_A - gamma)^2 for one trace.
Tensor usage_loss(const GatingTrace& trace, double gamma);
// Mean of the above over traces.
Tensor usage_loss(const std::vector<const GatingTrace*>& traces, double gamma);

// sum_i beta^(N-i) * mean |gt - pred_i|, the mean taken over pixels where
// `valid` is nonzero (all pixels when absent). Zero when nothing is valid.
Tensor disparity_loss(const std::vector<Tensor>& predictions, const Tensor& gt, double beta,
                      const std::optional<Tensor>& valid = std::nullopt);

Tensor total_loss(const Tensor& disp, const Tensor& balance, const Tensor& usage, const LossWeights& w);

}  // namespace smoe::loss
