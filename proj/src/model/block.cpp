// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "model/block.hpp"

#include <algorithm>

#include "core/errors.hpp"
#include "core/ops.hpp"
#include "model/init.hpp"

namespace smoe {

GumbelNoise GumbelNoise::draw(Rng& rng) {
    GumbelNoise n;
    n.keep = rng.gumbel();
    n.drop = rng.gumbel();
    return n;
}

namespace {

Tensor gate_logits(const DecisionGate& gate, const Tensor& x_cls) {
    const Tensor row = x_cls.rank() == 2 ? x_cls : ops::reshape(x_cls, {1, x_cls.numel()});
    return ops::linear(ops::gelu(ops::linear(row, gate.w1, gate.b1)), gate.w2, gate.b2);
}

}  // namespace

GateDecision gumbel_mask(const DecisionGate& gate, const Tensor& x_cls, Mode mode, double temperature,
                         const GumbelNoise& noise) {
    auto logits = gate_logits(gate, x_cls);
    if (mode == Mode::Infer) {
        // Argmax with ties to the lower index, i.e. keep.
        const double keep = logits[0] >= logits[1] ? 1.0 : 0.0;
        return {Tensor::from({1}, {keep}), logits};
    }
    auto perturbed = ops::add(logits, Tensor::from({1, 2}, {noise.keep, noise.drop}));
    auto soft = ops::softmax(perturbed, temperature);
    return {ops::gather(soft, {0}), logits};
}

GateDecision gumbel_mask(const DecisionGate& gate, const Tensor& x_cls, Mode mode, double temperature,
                         Rng* rng) {
    if (mode == Mode::Train) {
        if (!rng) throw ContractError("gumbel_mask: train mode needs a noise stream");
        return gumbel_mask(gate, x_cls, mode, temperature, GumbelNoise::draw(*rng));
    }
    return gumbel_mask(gate, x_cls, mode, temperature, GumbelNoise{});
}

double GatingTrace::activated_count() const {
    double n = 0.0;
    for (const auto& l : layers) n += l.lora_mask_value() + l.adapter_mask_value();
    return n;
}

double GatingTrace::mean_lora_mask() const {
    if (layers.empty()) return 0.0;
    double s = 0.0;
    for (const auto& l : layers) s += l.lora_mask_value();
    return s / static_cast<double>(layers.size());
}

double GatingTrace::mean_adapter_mask() const {
    if (layers.empty()) return 0.0;
    double s = 0.0;
    for (const auto& l : layers) s += l.adapter_mask_value();
    return s / static_cast<double>(layers.size());
}

SMoEBlock make_block(const BlockConfig& config, std::size_t index, Rng& frozen_rng, Rng& trainable_rng) {
    const std::size_t d = config.dim;
    if (config.heads == 0 || d % config.heads != 0) {
        throw ConfigError("dim " + std::to_string(d) + " not divisible by " + std::to_string(config.heads) +
                          " heads");
    }
    if (config.lora_ranks.empty() || config.adapter_kernels.empty()) {
        throw ConfigError("expert pools must not be empty");
    }
    SMoEBlock b;
    b.index = index;
    b.config = config;

    auto& f = b.frozen;
    f.ln1_gamma = Tensor::full({d}, 1.0);
    f.ln1_beta = Tensor::zeros({d});
    f.wq = init::orthogonal(d, d, frozen_rng);
    f.wk = init::orthogonal(d, d, frozen_rng);
    f.wv = init::orthogonal(d, d, frozen_rng);
    f.wo = init::orthogonal(d, d, frozen_rng);
    f.bq = Tensor::zeros({d});
    f.bk = Tensor::zeros({d});
    f.bv = Tensor::zeros({d});
    f.bo = Tensor::zeros({d});
    f.ln2_gamma = Tensor::full({d}, 1.0);
    f.ln2_beta = Tensor::zeros({d});
    f.w1 = init::orthogonal(config.mlp_hidden, d, frozen_rng);
    f.b1 = Tensor::zeros({config.mlp_hidden});
    f.w2 = init::orthogonal(d, config.mlp_hidden, frozen_rng);
    f.b2 = Tensor::zeros({d});

    const std::size_t m = config.lora_ranks.size();
    b.lora.router = make_router(d, m, config.router_temperature, config.top_k, config.granularity, trainable_rng);
    for (std::size_t p = 0; p < 3; ++p) {
        if (!config.lora_targets[p]) continue;
        for (auto r : config.lora_ranks) b.lora.experts[p].push_back(make_lora_expert(d, r, trainable_rng));
    }

    b.adapter.router = make_router(d, config.adapter_kernels.size(), config.router_temperature, config.top_k,
                                   config.granularity, trainable_rng);
    for (auto k : config.adapter_kernels) {
        b.adapter.experts.push_back(make_adapter_expert(d, config.adapter_bottleneck, k, trainable_rng));
    }

    for (DecisionGate* g : {&b.lora_gate, &b.adapter_gate}) {
        g->w1 = init::kaiming_uniform({config.gate_hidden, d}, d, trainable_rng);
        g->b1 = Tensor::zeros({config.gate_hidden}, true);
        g->w2 = init::kaiming_uniform({2, config.gate_hidden}, config.gate_hidden, trainable_rng);
        g->b2 = Tensor::zeros({2}, true);
    }
    return b;
}

namespace {

bool skipped(const Tensor& mask) { return !mask.requires_grad() && mask[0] == 0.0; }

std::vector<std::size_t> rows_for(const Routing& routing, std::size_t expert) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < routing.rows; ++r)
        for (std::size_t s = 0; s < routing.top_k; ++s)
            if (routing.expert_of(r, s) == expert) rows.push_back(r);
    return rows;
}

// Gate value of `expert` at each of `rows`, as a [rows] tensor.
Tensor gates_for(const Routing& routing, const std::vector<std::size_t>& rows, std::size_t expert) {
    return ops::gather(ops::gather_rows(routing.gates, rows), std::vector<std::size_t>(rows.size(), expert));
}

std::vector<std::size_t> used_experts(const Routing& routing) {
    std::vector<std::size_t> used(routing.selected);
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());
    return used;
}

void accumulate(std::optional<Tensor>& acc, const Tensor& term) {
    acc = acc ? ops::add(*acc, term) : term;
}

Tensor constant_mask(double v) { return Tensor::from({1}, {v}); }

}  // namespace

QKV moe_lora_apply(const SMoEBlock& block, const Tensor& h, const Tensor& mask, LayerTrace& trace) {
    const auto& f = block.frozen;
    std::array<Tensor, 3> out{ops::linear(h, f.wq, f.bq), ops::linear(h, f.wk, f.bk), ops::linear(h, f.wv, f.bv)};
    trace.lora_mask = mask;
    if (skipped(mask)) return {out[0], out[1], out[2]};

    const auto routing = route(block.lora.router, h);
    const std::size_t n = h.dim(0);
    const bool per_sample = block.lora.router.granularity == RoutingGranularity::PerSample;
    std::array<std::optional<Tensor>, 3> delta;
    for (auto i : used_experts(routing)) {
        if (per_sample) {
            const auto g = ops::gather(routing.gates, {i});
            for (std::size_t p = 0; p < 3; ++p) {
                if (block.lora.experts[p].empty()) continue;
                accumulate(delta[p], ops::scale_by(lora_forward(block.lora.experts[p][i], h), g));
            }
            continue;
        }
        const auto rows = rows_for(routing, i);
        const auto g = gates_for(routing, rows, i);
        const auto sub = ops::gather_rows(h, rows);
        for (std::size_t p = 0; p < 3; ++p) {
            if (block.lora.experts[p].empty()) continue;
            auto y = ops::scale_rows(lora_forward(block.lora.experts[p][i], sub), g);
            accumulate(delta[p], ops::scatter_add_rows(y, rows, n));
        }
    }
    trace.lora_routed = true;
    trace.lora_routing = routing;
    for (std::size_t p = 0; p < 3; ++p) {
        if (delta[p]) out[p] = ops::add(out[p], ops::scale_by(*delta[p], mask));
    }
    return {out[0], out[1], out[2]};
}

Tensor moe_adapter_apply(const SMoEBlock& block, const Tensor& h, const Tensor& mask, TokenGrid grid,
                         LayerTrace& trace) {
    const auto& f = block.frozen;
    auto out = ops::linear(ops::gelu(ops::linear(h, f.w1, f.b1)), f.w2, f.b2);
    trace.adapter_mask = mask;
    if (skipped(mask)) return out;
    if (h.dim(0) != grid.cells() + 1) {
        throw ShapeError("moe_adapter_apply: " + std::to_string(h.dim(0)) + " tokens for a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
    }

    const auto spatial = ops::slice_rows(h, 1, grid.cells());
    const auto routing = route(block.adapter.router, spatial);
    const std::size_t n = h.dim(0);
    const bool per_sample = block.adapter.router.granularity == RoutingGranularity::PerSample;
    std::optional<Tensor> delta;
    for (auto j : used_experts(routing)) {
        const auto& e = block.adapter.experts[j];
        if (per_sample) {
            accumulate(delta, ops::scale_by(adapter_forward(e, h, grid), ops::gather(routing.gates, {j})));
            continue;
        }
        const auto cells = rows_for(routing, j);
        auto y = ops::scale_rows(adapter_forward_at(e, spatial, grid, cells), gates_for(routing, cells, j));
        std::vector<std::size_t> rows(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) rows[c] = cells[c] + 1;
        accumulate(delta, ops::scatter_add_rows(y, rows, n));
    }
    trace.adapter_routed = true;
    trace.adapter_routing = routing;
    if (delta) out = ops::add(out, ops::scale_by(*delta, mask));
    return out;
}

namespace {

Tensor resolve_mask(const DecisionGate& gate, const Tensor& h, const BlockContext& ctx,
                    const std::optional<double>& forced) {
    if (!ctx.experts_enabled) return constant_mask(0.0);
    if (forced) return constant_mask(*forced);
    return gumbel_mask(gate, ops::slice_rows(h, 0, 1), ctx.mode, ctx.gumbel_temperature, ctx.noise).mask;
}

}  // namespace

Tensor block_forward(const SMoEBlock& block, const Tensor& x, const BlockContext& ctx, GatingTrace& trace) {
    const auto& f = block.frozen;
    if (x.rank() != 2 || x.dim(1) != block.config.dim) {
        throw ShapeError("block_forward: input " + shape_str(x.shape()) + " does not match width " +
                         std::to_string(block.config.dim));
    }
    LayerTrace layer;
    const auto h1 = ops::layer_norm(x, f.ln1_gamma, f.ln1_beta);
    const auto lora_mask = resolve_mask(block.lora_gate, h1, ctx, ctx.force_lora_mask);
    const auto qkv = moe_lora_apply(block, h1, lora_mask, layer);
    const auto attn = ops::linear(ops::multi_head_attention(qkv.q, qkv.k, qkv.v, block.config.heads), f.wo, f.bo);
    const auto x2 = ops::add(x, attn);

    const auto h2 = ops::layer_norm(x2, f.ln2_gamma, f.ln2_beta);
    const auto adapter_mask = resolve_mask(block.adapter_gate, h2, ctx, ctx.force_adapter_mask);
    const auto mixed = moe_adapter_apply(block, h2, adapter_mask, ctx.grid, layer);
    trace.layers.push_back(std::move(layer));
    return ops::add(x2, mixed);
}

void collect_block_tensors(SMoEBlock& block, const std::string& prefix,
                           std::vector<std::pair<std::string, Tensor>>& out) {
    auto& f = block.frozen;
    const std::pair<const char*, Tensor*> frozen[] = {
        {"ln1.gamma", &f.ln1_gamma}, {"ln1.beta", &f.ln1_beta}, {"attn.wq", &f.wq}, {"attn.bq", &f.bq},
        {"attn.wk", &f.wk},          {"attn.bk", &f.bk},        {"attn.wv", &f.wv}, {"attn.bv", &f.bv},
        {"attn.wo", &f.wo},          {"attn.bo", &f.bo},        {"ln2.gamma", &f.ln2_gamma},
        {"ln2.beta", &f.ln2_beta},   {"mlp.w1", &f.w1},         {"mlp.b1", &f.b1},  {"mlp.w2", &f.w2},
        {"mlp.b2", &f.b2}};
    for (const auto& [name, t] : frozen) out.emplace_back(prefix + name, *t);

    out.emplace_back(prefix + "lora.router", block.lora.router.weight);
    static const char* proj[] = {"q", "k", "v"};
    for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t i = 0; i < block.lora.experts[p].size(); ++i) {
            const auto base = prefix + "lora." + proj[p] + "." + std::to_string(i) + ".";
            out.emplace_back(base + "down", block.lora.experts[p][i].down);
            out.emplace_back(base + "up", block.lora.experts[p][i].up);
        }
    out.emplace_back(prefix + "adapter.router", block.adapter.router.weight);
    for (std::size_t j = 0; j < block.adapter.experts.size(); ++j) {
        const auto base = prefix + "adapter." + std::to_string(j) + ".";
        out.emplace_back(base + "down", block.adapter.experts[j].down);
        out.emplace_back(base + "spatial", block.adapter.experts[j].spatial);
        out.emplace_back(base + "up", block.adapter.experts[j].up);
    }
    for (auto [name, g] : {std::pair{"gate.lora.", &block.lora_gate}, std::pair{"gate.adapter.", &block.adapter_gate}}) {
        out.emplace_back(prefix + name + "w1", g->w1);
        out.emplace_back(prefix + name + "b1", g->b1);
        out.emplace_back(prefix + name + "w2", g->w2);
        out.emplace_back(prefix + name + "b2", g->b2);
    }
}

}  // namespace smoe
