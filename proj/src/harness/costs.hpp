// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Multiply-accumulate cost of each MoE module, in the units counted by the
// tensor ops. A module's cost depends on how its router spreads tokens, so
// the table stores per-expert rates and prices a concrete routing.

#pragma once

#include <cstdint>
#include <vector>

#include "model/stereo.hpp"

namespace smoe {

enum class MoEFamily { LoRA, Adapter };

struct LayerCost {
    std::uint64_t lora_router = 0;                 // per view
    std::vector<std::uint64_t> lora_per_row;       // per routed row, all adapted projections
    std::uint64_t adapter_router = 0;              // per view
    std::vector<std::uint64_t> adapter_fixed;      // per used expert per view: grid-wide down projection
    std::vector<std::uint64_t> adapter_per_cell;   // per routed cell: spatial conv and up projection
};

struct CostTable {
    std::vector<LayerCost> layers;
    RoutingGranularity granularity = RoutingGranularity::PerToken;
    std::size_t tokens = 0;  // class token plus grid cells

    // MACs a view saves when the module is dropped, given the routing it
    // would have used had it been kept.
    std::uint64_t module_cost(std::size_t layer, MoEFamily family, const Routing& routing) const;
};

CostTable build_cost_table(const StereoModel& model);

}  // namespace smoe
