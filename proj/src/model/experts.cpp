// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "model/experts.hpp"

#include <cmath>

#include "core/errors.hpp"
#include "core/ops.hpp"
#include "model/init.hpp"

namespace smoe {

LoRAExpert make_lora_expert(std::size_t dim, std::size_t rank, Rng& rng) {
    if (rank == 0 || 2 * rank > dim) {
        throw ConfigError("LoRA rank " + std::to_string(rank) + " must lie in [1, dim/2] for dim " +
                          std::to_string(dim));
    }
    return LoRAExpert{rank, init::kaiming_uniform({rank, dim}, dim, rng),
                      Tensor::zeros({dim, rank}, true)};
}

Tensor lora_forward(const LoRAExpert& expert, const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != expert.down.dim(1)) {
        throw ShapeError("lora_forward: input " + shape_str(x.shape()) + " does not match expert width " +
                         std::to_string(expert.down.dim(1)));
    }
    return ops::linear(ops::linear(x, expert.down), expert.up);
}

AdapterExpert make_adapter_expert(std::size_t dim, std::size_t bottleneck, std::size_t kernel, Rng& rng) {
    if (kernel == 0 || kernel % 2 == 0) {
        throw ConfigError("adapter kernel size must be odd, got " + std::to_string(kernel));
    }
    if (bottleneck == 0 || bottleneck > dim) {
        throw ConfigError("adapter bottleneck " + std::to_string(bottleneck) + " invalid for dim " +
                          std::to_string(dim));
    }
    AdapterExpert e;
    e.kernel = kernel;
    e.bottleneck = bottleneck;
    e.down = init::kaiming_uniform({bottleneck, dim}, dim, rng);
    e.spatial = init::kaiming_uniform({bottleneck, bottleneck, kernel, kernel}, bottleneck * kernel * kernel, rng);
    e.up = Tensor::zeros({dim, bottleneck}, true);
    return e;
}

namespace {

// [H*W x dim] tokens -> GELU(down) laid out channel-first [b x H x W].
Tensor adapter_bottleneck_map(const AdapterExpert& e, const Tensor& spatial, TokenGrid grid) {
    auto reduced = ops::gelu(ops::linear(spatial, e.down));
    return ops::reshape(ops::transpose(reduced), {e.bottleneck, grid.height, grid.width});
}

}  // namespace

Tensor adapter_forward(const AdapterExpert& expert, const Tensor& x, TokenGrid grid) {
    if (x.rank() != 2 || x.dim(1) != expert.down.dim(1)) {
        throw ShapeError("adapter_forward: input " + shape_str(x.shape()) + " does not match expert width " +
                         std::to_string(expert.down.dim(1)));
    }
    if (x.dim(0) != grid.cells() + 1) {
        throw ShapeError("adapter_forward: " + std::to_string(x.dim(0)) + " tokens do not form a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                         " grid plus class token");
    }
    auto spatial = ops::slice_rows(x, 1, grid.cells());
    auto mapped = adapter_bottleneck_map(expert, spatial, grid);
    auto mixed = ops::gelu(ops::conv2d(mapped, expert.spatial, (expert.kernel - 1) / 2));
    auto tokens = ops::transpose(ops::reshape(mixed, {expert.bottleneck, grid.cells()}));
    auto restored = ops::linear(tokens, expert.up);
    return ops::concat_rows({Tensor::zeros({1, x.dim(1)}), restored});
}

Tensor adapter_forward_at(const AdapterExpert& expert, const Tensor& spatial, TokenGrid grid,
                          const std::vector<std::size_t>& cells) {
    if (spatial.rank() != 2 || spatial.dim(0) != grid.cells()) {
        throw ShapeError("adapter_forward_at: " + shape_str(spatial.shape()) + " is not a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " token grid");
    }
    auto mapped = adapter_bottleneck_map(expert, spatial, grid);
    auto mixed = ops::gelu(ops::conv2d_at(mapped, expert.spatial, cells));
    return ops::linear(mixed, expert.up);
}

Router make_router(std::size_t dim, std::size_t experts, double temperature, std::size_t top_k,
                   RoutingGranularity granularity, Rng& rng) {
    if (!(temperature > 0.0)) throw ConfigError("router temperature must be positive");
    if (top_k == 0 || top_k > experts) {
        throw ConfigError("top_k " + std::to_string(top_k) + " invalid for " + std::to_string(experts) +
                          " experts");
    }
    return Router{init::kaiming_uniform({experts, dim}, dim, rng), temperature, top_k, granularity};
}

Routing route(const Router& router, const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != router.weight.dim(1)) {
        throw ShapeError("route: input " + shape_str(x.shape()) + " does not match router " +
                         shape_str(router.weight.shape()));
    }
    const Tensor rows = router.granularity == RoutingGranularity::PerSample ? ops::mean_rows(x) : x;
    auto probs = ops::softmax(ops::linear(rows, router.weight), router.temperature);
    auto best = ops::top_k(probs, router.top_k);
    const std::size_t n = probs.dim(0), m = probs.dim(1);
    std::vector<double> keep(n * m, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < router.top_k; ++j) keep[r * m + best.indices[r * router.top_k + j]] = 1.0;
    Routing out;
    out.gates = ops::mul(probs, Tensor::from({n, m}, std::move(keep)));
    out.selected = std::move(best.indices);
    out.rows = n;
    out.top_k = router.top_k;
    return out;
}

}  // namespace smoe
