// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm transformer block with frozen attention/MLP weights, an MoE-LoRA
// layer inside the attention projections, an MoE-Adapter layer in parallel to
// the MLP, and one keep/drop decision gate per MoE layer.

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "model/experts.hpp"

namespace smoe {

enum class Mode { Train, Infer };

enum class Projection : std::size_t { Query = 0, Key = 1, Value = 2 };

struct BlockConfig {
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t mlp_hidden = 256;
    std::vector<std::size_t> lora_ranks{4, 8, 16, 32};
    std::vector<std::size_t> adapter_kernels{3, 5, 7, 9};
    std::size_t adapter_bottleneck = 16;
    double router_temperature = 5.0;
    std::size_t top_k = 1;
    RoutingGranularity granularity = RoutingGranularity::PerToken;
    std::array<bool, 3> lora_targets{true, false, true};  // query, key, value
    std::size_t gate_hidden = 16;
};

struct FrozenBlockWeights {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor w1, b1, w2, b2;
};

struct MoELoRALayer {
    Router router;
    // One expert list per projection; empty when the projection is not adapted.
    // Expert i of every list shares router slot i.
    std::array<std::vector<LoRAExpert>, 3> experts;
};

struct MoEAdapterLayer {
    Router router;
    std::vector<AdapterExpert> experts;
};

// Two-layer MLP from the class token to K = 2 logits; index 0 means keep.
struct DecisionGate {
    Tensor w1, b1, w2, b2;
};

struct GumbelNoise {
    double keep = 0.0;
    double drop = 0.0;
    static GumbelNoise draw(Rng& rng);
};

struct GateDecision {
    Tensor mask;    // one element; differentiable in train mode, constant 0/1 at inference
    Tensor logits;  // [1 x 2]
};

GateDecision gumbel_mask(const DecisionGate& gate, const Tensor& x_cls, Mode mode, double temperature,
                         const GumbelNoise& noise);
// Draws the noise from `rng` in train mode; `rng` may be null at inference.
GateDecision gumbel_mask(const DecisionGate& gate, const Tensor& x_cls, Mode mode, double temperature,
                         Rng* rng);

struct LayerTrace {
    Tensor lora_mask;     // scalar handles kept for the usage loss
    Tensor adapter_mask;
    bool lora_routed = false;
    bool adapter_routed = false;
    std::optional<Routing> lora_routing;
    std::optional<Routing> adapter_routing;

    double lora_mask_value() const { return lora_mask[0]; }
    double adapter_mask_value() const { return adapter_mask[0]; }
};

struct GatingTrace {
    std::vector<LayerTrace> layers;

    std::size_t size() const { return layers.size(); }
    // Sum over layers of both masks; an integer at inference.
    double activated_count() const;
    double mean_lora_mask() const;
    double mean_adapter_mask() const;
};

struct SMoEBlock {
    std::size_t index = 0;
    BlockConfig config;
    FrozenBlockWeights frozen;
    MoELoRALayer lora;
    MoEAdapterLayer adapter;
    DecisionGate lora_gate;
    DecisionGate adapter_gate;
};

// Frozen weights come from `frozen_rng` (seeded orthogonal draws); everything
// trainable from `trainable_rng`.
SMoEBlock make_block(const BlockConfig& config, std::size_t index, Rng& frozen_rng, Rng& trainable_rng);

struct BlockContext {
    Mode mode = Mode::Infer;
    TokenGrid grid;
    double gumbel_temperature = 1.0;
    Rng* noise = nullptr;  // Gumbel stream, train mode only
    bool experts_enabled = true;
    // Test and accounting hooks: bypass the decision gates with fixed masks.
    std::optional<double> force_lora_mask;
    std::optional<double> force_adapter_mask;
};

struct QKV {
    Tensor q, k, v;
};

// Frozen q/k/v projections plus mask * sum_i gate_i * LoRA_i on the adapted
// projections. `h` is the block's pre-attention normalised input.
QKV moe_lora_apply(const SMoEBlock& block, const Tensor& h, const Tensor& mask, LayerTrace& trace);

// Frozen MLP plus mask * sum_j gate_j * Adapter_j.
Tensor moe_adapter_apply(const SMoEBlock& block, const Tensor& h, const Tensor& mask, TokenGrid grid,
                         LayerTrace& trace);

// x + attn(LN1 x), then + MLP/adapter(LN2 .). Row 0 of `x` is the class token.
Tensor block_forward(const SMoEBlock& block, const Tensor& x, const BlockContext& ctx, GatingTrace& trace);

// Named trainable / frozen tensors of one block, for optimisers and checkpoints.
void collect_block_tensors(SMoEBlock& block, const std::string& prefix,
                           std::vector<std::pair<std::string, Tensor>>& out);

}  // namespace smoe
