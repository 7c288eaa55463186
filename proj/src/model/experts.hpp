// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Heterogeneous expert pools and the top-k router that scores them.

#pragma once

#include <cstddef>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace smoe {

// Low-rank additive update: x -> x W_down^T W_up^T, i.e. (W_up W_down) x per token.
struct LoRAExpert {
    std::size_t rank = 0;
    Tensor down;  // [rank x dim]
    Tensor up;    // [dim x rank], zero at init
};

// W_down Kaiming-uniform, W_up zero. Requires rank <= dim / 2.
LoRAExpert make_lora_expert(std::size_t dim, std::size_t rank, Rng& rng);

Tensor lora_forward(const LoRAExpert& expert, const Tensor& x);

struct TokenGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t cells() const { return height * width; }
};

// 1x1 down -> GELU -> kxk -> GELU -> 1x1 up over the spatial token grid.
struct AdapterExpert {
    std::size_t kernel = 0;
    std::size_t bottleneck = 0;
    Tensor down;     // [bottleneck x dim]
    Tensor spatial;  // [bottleneck x bottleneck x kernel x kernel]
    Tensor up;       // [dim x bottleneck], zero at init
};

AdapterExpert make_adapter_expert(std::size_t dim, std::size_t bottleneck, std::size_t kernel, Rng& rng);

// x: [1 + H*W x dim] with the class token in row 0. The class-token row of
// the result is zero: the class token passes the adapter branch untouched.
Tensor adapter_forward(const AdapterExpert& expert, const Tensor& x, TokenGrid grid);

// Adapter output at a subset of grid cells only; rows follow `cells`.
// `spatial` is the [H*W x dim] token block without the class token.
Tensor adapter_forward_at(const AdapterExpert& expert, const Tensor& spatial, TokenGrid grid,
                          const std::vector<std::size_t>& cells);

enum class RoutingGranularity { PerToken, PerSample };

struct Router {
    Tensor weight;  // [experts x dim]
    double temperature = 5.0;
    std::size_t top_k = 1;
    RoutingGranularity granularity = RoutingGranularity::PerToken;

    std::size_t experts() const { return weight.dim(0); }
};

Router make_router(std::size_t dim, std::size_t experts, double temperature, std::size_t top_k,
                   RoutingGranularity granularity, Rng& rng);

struct Routing {
    Tensor gates;                       // [rows x experts]; top-k softmax entries, zeros elsewhere
    std::vector<std::size_t> selected;  // [rows x top_k], best first
    std::size_t rows = 0;
    std::size_t top_k = 0;

    std::size_t expert_of(std::size_t row, std::size_t slot = 0) const { return selected[row * top_k + slot]; }
};

// rows = N per token, or 1 (mean-pooled input) per sample.
Routing route(const Router& router, const Tensor& x);

}  // namespace smoe
