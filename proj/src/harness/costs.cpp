// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "harness/costs.hpp"

#include <algorithm>

#include "core/errors.hpp"

namespace smoe {

CostTable build_cost_table(const StereoModel& model) {
    const auto& cfg = model.config;
    const std::uint64_t d = cfg.block.dim, cells = cfg.grid().cells();
    CostTable t;
    t.granularity = cfg.block.granularity;
    t.tokens = cells + 1;
    const bool per_sample = t.granularity == RoutingGranularity::PerSample;
    for (const auto& b : model.backbone.blocks) {
        LayerCost c;
        const std::uint64_t m = b.lora.router.experts(), n = b.adapter.router.experts();
        c.lora_router = (per_sample ? 1 : t.tokens) * m * d;
        c.adapter_router = (per_sample ? 1 : cells) * n * d;
        for (std::size_t i = 0; i < m; ++i) {
            std::uint64_t per_row = 0;
            for (const auto& pool : b.lora.experts)
                if (!pool.empty()) per_row += 2 * d * pool[i].rank;
            c.lora_per_row.push_back(per_row);
        }
        for (const auto& e : b.adapter.experts) {
            const std::uint64_t bn = e.bottleneck, k = e.kernel;
            c.adapter_fixed.push_back(cells * d * bn);
            c.adapter_per_cell.push_back(bn * bn * k * k + bn * d);
        }
        t.layers.push_back(std::move(c));
    }
    return t;
}

std::uint64_t CostTable::module_cost(std::size_t layer, MoEFamily family, const Routing& routing) const {
    if (layer >= layers.size()) throw ContractError("module_cost: layer out of range");
    const auto& c = layers[layer];
    const bool per_sample = granularity == RoutingGranularity::PerSample;
    std::vector<std::uint64_t> rows_of(family == MoEFamily::LoRA ? c.lora_per_row.size() : c.adapter_fixed.size(), 0);
    for (auto e : routing.selected) {
        if (e >= rows_of.size()) throw ContractError("module_cost: routing does not match the table");
        ++rows_of[e];
    }
    std::uint64_t total = family == MoEFamily::LoRA ? c.lora_router : c.adapter_router;
    for (std::size_t e = 0; e < rows_of.size(); ++e) {
        if (rows_of[e] == 0) continue;
        if (family == MoEFamily::LoRA) {
            const std::uint64_t rows = per_sample ? tokens : rows_of[e];
            total += rows * c.lora_per_row[e];
        } else {
            const std::uint64_t cells = per_sample ? tokens - 1 : rows_of[e];
            total += c.adapter_fixed[e] + cells * c.adapter_per_cell[e];
        }
    }
    return total;
}

}  // namespace smoe
