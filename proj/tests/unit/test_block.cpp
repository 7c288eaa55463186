// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "core/errors.hpp"
#include "core/gradcheck.hpp"
#include "core/ops.hpp"
#include "model/block.hpp"

using namespace smoe;

namespace {

constexpr TokenGrid kGrid{3, 4};
constexpr std::size_t kTokens = 13;

BlockConfig small_config() {
    BlockConfig c;
    c.dim = 16;
    c.heads = 2;
    c.mlp_hidden = 32;
    c.lora_ranks = {2, 4, 8};
    c.adapter_kernels = {1, 3, 5};
    c.adapter_bottleneck = 4;
    c.gate_hidden = 8;
    return c;
}

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

void randomize(Tensor& t, Rng& rng, double scale = 0.3) {
    for (auto& x : t.mutable_data()) x = scale * rng.normal();
}

// Nonzero up-projections so every expert contributes.
void wake_experts(SMoEBlock& b, Rng& rng) {
    for (auto& pool : b.lora.experts)
        for (auto& e : pool) randomize(e.up, rng);
    for (auto& e : b.adapter.experts) randomize(e.up, rng);
}

SMoEBlock fresh_block(std::uint64_t seed, BlockConfig cfg = small_config()) {
    Rng frozen(seed), trainable(seed + 1000);
    return make_block(cfg, 0, frozen, trainable);
}

DecisionGate constant_gate(double keep, double drop, std::size_t dim) {
    return DecisionGate{Tensor::zeros({4, dim}), Tensor::zeros({4}), Tensor::zeros({2, 4}),
                        Tensor::from({2}, {keep, drop})};
}

void expect_equal(const Tensor& a, const Tensor& b) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]) << "at " << i;
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "at " << i;
}

// Plain pre-norm block with no expert branches.
Tensor frozen_block_oracle(const SMoEBlock& b, const Tensor& x) {
    const auto& f = b.frozen;
    auto h = ops::layer_norm(x, f.ln1_gamma, f.ln1_beta);
    auto attn = ops::multi_head_attention(ops::linear(h, f.wq, f.bq), ops::linear(h, f.wk, f.bk),
                                          ops::linear(h, f.wv, f.bv), b.config.heads);
    auto x2 = ops::add(x, ops::linear(attn, f.wo, f.bo));
    auto h2 = ops::layer_norm(x2, f.ln2_gamma, f.ln2_beta);
    return ops::add(x2, ops::linear(ops::gelu(ops::linear(h2, f.w1, f.b1)), f.w2, f.b2));
}

}  // namespace

// -- decision gate ------------------------------------------------------------

TEST(GumbelMask, SymmetricLogitsZeroNoise) {
    auto g = constant_gate(0.0, 0.0, 16);
    Rng rng(1);
    auto x = random_tensor({1, 16}, rng);
    for (double tau : {0.1, 0.5, 1.0, 5.0}) {
        EXPECT_DOUBLE_EQ(gumbel_mask(g, x, Mode::Train, tau, GumbelNoise{}).mask[0], 0.5);
    }
}

TEST(GumbelMask, DominantLogitKeepsAtInference) {
    auto x = Tensor::zeros({1, 16});
    EXPECT_EQ(gumbel_mask(constant_gate(10, -10, 16), x, Mode::Infer, 1.0, nullptr).mask[0], 1.0);
    EXPECT_EQ(gumbel_mask(constant_gate(-10, 10, 16), x, Mode::Infer, 1.0, nullptr).mask[0], 0.0);
    EXPECT_EQ(gumbel_mask(constant_gate(0, 0, 16), x, Mode::Infer, 1.0, nullptr).mask[0], 1.0);
}

TEST(GumbelMask, MonteCarloMeanIsHalf) {
    auto g = constant_gate(0.0, 0.0, 16);
    auto x = Tensor::zeros({1, 16});
    Rng rng(2);
    double sum = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        // Closed form of the gate with noise, avoiding graph construction per draw.
        const auto n = GumbelNoise::draw(rng);
        sum += 1.0 / (1.0 + std::exp(n.drop - n.keep));
    }
    EXPECT_NEAR(sum / draws, 0.5, 0.01);
    // Spot check the closed form against the gate itself.
    Rng a(3), b(3);
    const auto n = GumbelNoise::draw(a);
    EXPECT_NEAR(gumbel_mask(g, x, Mode::Train, 1.0, &b).mask[0], 1.0 / (1.0 + std::exp(n.drop - n.keep)), 1e-12);
}

TEST(GumbelMask, TrainMaskInOpenInterval) {
    auto b = fresh_block(4);
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        auto x = random_tensor({1, 16}, rng);
        const double m = gumbel_mask(b.lora_gate, x, Mode::Train, 1.0, &rng).mask[0];
        EXPECT_GT(m, 0.0);
        EXPECT_LT(m, 1.0);
    }
}

TEST(GumbelMask, TrainNeedsNoise) {
    auto g = constant_gate(0, 0, 16);
    EXPECT_THROW(gumbel_mask(g, Tensor::zeros({1, 16}), Mode::Train, 1.0, nullptr), ContractError);
}

// -- MoE LoRA -------------------------------------------------------------------

TEST(MoELoRA, MaskZeroIsFrozenProjection) {
    auto b = fresh_block(6);
    Rng rng(7);
    wake_experts(b, rng);
    auto h = random_tensor({kTokens, 16}, rng);
    LayerTrace t;
    auto out = moe_lora_apply(b, h, Tensor::from({1}, {0.0}), t);
    expect_equal(out.q, ops::linear(h, b.frozen.wq, b.frozen.bq));
    expect_equal(out.k, ops::linear(h, b.frozen.wk, b.frozen.bk));
    expect_equal(out.v, ops::linear(h, b.frozen.wv, b.frozen.bv));
    EXPECT_FALSE(t.lora_routed);
}

TEST(MoELoRA, ZeroInitExpertsAreInvisible) {
    auto b = fresh_block(8);
    Rng rng(9);
    auto h = random_tensor({kTokens, 16}, rng);
    LayerTrace t;
    auto out = moe_lora_apply(b, h, Tensor::from({1}, {1.0}), t);
    expect_equal(out.q, ops::linear(h, b.frozen.wq, b.frozen.bq));
    expect_equal(out.v, ops::linear(h, b.frozen.wv, b.frozen.bv));
    EXPECT_TRUE(t.lora_routed);
}

TEST(MoELoRA, ManualComposition) {
    for (auto gran : {RoutingGranularity::PerToken, RoutingGranularity::PerSample}) {
        auto cfg = small_config();
        cfg.granularity = gran;
        cfg.lora_targets = {true, true, true};
        auto b = fresh_block(10, cfg);
        Rng rng(11);
        wake_experts(b, rng);
        auto h = random_tensor({kTokens, 16}, rng);
        const double mask = 0.7;
        LayerTrace t;
        auto out = moe_lora_apply(b, h, Tensor::from({1}, {mask}), t);

        // Oracle: per token, softmax over router logits, pick argmax, add mask*p*E(x).
        auto logits = ops::linear(gran == RoutingGranularity::PerSample ? ops::mean_rows(h) : h, b.lora.router.weight);
        const Tensor* frozen_w[] = {&b.frozen.wq, &b.frozen.wk, &b.frozen.wv};
        const Tensor* frozen_b[] = {&b.frozen.bq, &b.frozen.bk, &b.frozen.bv};
        const Tensor* got[] = {&out.q, &out.k, &out.v};
        for (std::size_t p = 0; p < 3; ++p) {
            auto base = ops::linear(h, *frozen_w[p], *frozen_b[p]);
            for (std::size_t n = 0; n < kTokens; ++n) {
                const std::size_t row = gran == RoutingGranularity::PerSample ? 0 : n;
                std::size_t best = 0;
                double z = 0.0;
                for (std::size_t j = 0; j < 3; ++j) {
                    if (logits[row * 3 + j] > logits[row * 3 + best]) best = j;
                }
                for (std::size_t j = 0; j < 3; ++j) z += std::exp((logits[row * 3 + j] - logits[row * 3 + best]) / 5.0);
                const double gate = 1.0 / z;
                auto e = lora_forward(b.lora.experts[p][best], ops::slice_rows(h, n, 1));
                for (std::size_t c = 0; c < 16; ++c)
                    ASSERT_NEAR((*got[p])[n * 16 + c], base[n * 16 + c] + mask * gate * e[c], 1e-12);
            }
        }
    }
}

TEST(MoELoRA, KeyUntouchedByDefault) {
    auto b = fresh_block(12);
    EXPECT_TRUE(b.lora.experts[1].empty());
    Rng rng(13);
    wake_experts(b, rng);
    auto h = random_tensor({kTokens, 16}, rng);
    LayerTrace t;
    auto out = moe_lora_apply(b, h, Tensor::from({1}, {1.0}), t);
    expect_equal(out.k, ops::linear(h, b.frozen.wk, b.frozen.bk));
}

// -- MoE Adapter ----------------------------------------------------------------

TEST(MoEAdapter, MaskZeroIsFrozenMlp) {
    auto b = fresh_block(14);
    Rng rng(15);
    wake_experts(b, rng);
    auto h = random_tensor({kTokens, 16}, rng);
    LayerTrace t;
    auto out = moe_adapter_apply(b, h, Tensor::from({1}, {0.0}), kGrid, t);
    const auto& f = b.frozen;
    expect_equal(out, ops::linear(ops::gelu(ops::linear(h, f.w1, f.b1)), f.w2, f.b2));
    EXPECT_FALSE(t.adapter_routed);
}

TEST(MoEAdapter, ZeroInitExpertsAreInvisible) {
    auto b = fresh_block(16);
    Rng rng(17);
    auto h = random_tensor({kTokens, 16}, rng);
    LayerTrace t;
    auto out = moe_adapter_apply(b, h, Tensor::from({1}, {1.0}), kGrid, t);
    const auto& f = b.frozen;
    expect_equal(out, ops::linear(ops::gelu(ops::linear(h, f.w1, f.b1)), f.w2, f.b2));
}

TEST(MoEAdapter, ManualComposition) {
    for (auto gran : {RoutingGranularity::PerToken, RoutingGranularity::PerSample}) {
        auto cfg = small_config();
        cfg.granularity = gran;
        auto b = fresh_block(18, cfg);
        Rng rng(19);
        wake_experts(b, rng);
        auto h = random_tensor({kTokens, 16}, rng);
        const double mask = 0.4;
        LayerTrace t;
        auto out = moe_adapter_apply(b, h, Tensor::from({1}, {mask}), kGrid, t);

        const auto& f = b.frozen;
        auto base = ops::linear(ops::gelu(ops::linear(h, f.w1, f.b1)), f.w2, f.b2);
        auto spatial = ops::slice_rows(h, 1, kGrid.cells());
        auto logits = ops::linear(gran == RoutingGranularity::PerSample ? ops::mean_rows(spatial) : spatial,
                                  b.adapter.router.weight);
        std::vector<Tensor> dense;
        for (const auto& e : b.adapter.experts) dense.push_back(adapter_forward(e, h, kGrid));
        for (std::size_t c = 0; c < 16; ++c) ASSERT_EQ(out[c], base[c]);  // class row
        for (std::size_t n = 1; n < kTokens; ++n) {
            const std::size_t row = gran == RoutingGranularity::PerSample ? 0 : n - 1;
            std::size_t best = 0;
            for (std::size_t j = 1; j < 3; ++j)
                if (logits[row * 3 + j] > logits[row * 3 + best]) best = j;
            double z = 0.0;
            for (std::size_t j = 0; j < 3; ++j) z += std::exp((logits[row * 3 + j] - logits[row * 3 + best]) / 5.0);
            for (std::size_t c = 0; c < 16; ++c)
                ASSERT_NEAR(out[n * 16 + c], base[n * 16 + c] + mask * dense[best][n * 16 + c] / z, 1e-12);
        }
    }
}

// -- block ----------------------------------------------------------------------

TEST(Block, MasksZeroEqualFrozenBlock) {
    auto b = fresh_block(20);
    Rng rng(21);
    wake_experts(b, rng);
    auto x = random_tensor({kTokens, 16}, rng);
    BlockContext ctx;
    ctx.grid = kGrid;
    ctx.force_lora_mask = 0.0;
    ctx.force_adapter_mask = 0.0;
    GatingTrace trace;
    expect_equal(block_forward(b, x, ctx, trace), frozen_block_oracle(b, x));

    ctx.force_lora_mask.reset();
    ctx.force_adapter_mask.reset();
    ctx.experts_enabled = false;
    GatingTrace off;
    expect_equal(block_forward(b, x, ctx, off), frozen_block_oracle(b, x));
}

TEST(Block, ZeroInitExpertsEqualFrozenBlock) {
    auto b = fresh_block(22);
    Rng rng(23);
    auto x = random_tensor({kTokens, 16}, rng);
    Rng noise(24);
    BlockContext ctx{Mode::Train, kGrid, 1.0, &noise};
    GatingTrace trace;
    expect_near(block_forward(b, x, ctx, trace), frozen_block_oracle(b, x), 0.0);
}

TEST(Block, InferenceTraceIsBinary) {
    Rng rng(25);
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto b = fresh_block(30 + s);
        wake_experts(b, rng);
        randomize(b.lora_gate.b2, rng, 2.0);
        randomize(b.adapter_gate.b2, rng, 2.0);
        GatingTrace trace;
        BlockContext ctx{Mode::Infer, kGrid};
        auto x = random_tensor({kTokens, 16}, rng);
        block_forward(b, x, ctx, trace);
        ASSERT_EQ(trace.size(), 1u);
        const auto& l = trace.layers[0];
        EXPECT_TRUE(l.lora_mask_value() == 0.0 || l.lora_mask_value() == 1.0);
        EXPECT_TRUE(l.adapter_mask_value() == 0.0 || l.adapter_mask_value() == 1.0);
        const double count = trace.activated_count();
        EXPECT_TRUE(count == 0.0 || count == 1.0 || count == 2.0);
        EXPECT_EQ(count, l.lora_mask_value() + l.adapter_mask_value());
        EXPECT_EQ(l.lora_routed, l.lora_mask_value() == 1.0);
        EXPECT_EQ(l.adapter_routed, l.adapter_mask_value() == 1.0);
    }
}

TEST(Block, GradientIsolation) {
    auto b = fresh_block(40);
    Rng rng(41);
    wake_experts(b, rng);
    auto x = random_tensor({kTokens, 16}, rng);
    Rng noise(42);
    BlockContext ctx{Mode::Train, kGrid, 1.0, &noise};
    GatingTrace trace;
    Tape tape;
    TapeScope scope(tape);
    auto loss = ops::sum(ops::square(block_forward(b, x, ctx, trace)));
    tape.backward(loss);

    std::vector<std::pair<std::string, Tensor>> named;
    collect_block_tensors(b, "b0.", named);
    std::size_t trainable = 0;
    for (const auto& [name, t] : named) {
        if (t.requires_grad()) {
            ++trainable;
        } else {
            EXPECT_FALSE(t.has_grad()) << name;
        }
    }
    EXPECT_GT(trainable, 0u);
    EXPECT_TRUE(b.lora.router.weight.has_grad());
    EXPECT_TRUE(b.adapter.router.weight.has_grad());
    EXPECT_TRUE(b.lora_gate.w1.has_grad());
    EXPECT_TRUE(b.adapter_gate.w2.has_grad());
    EXPECT_TRUE(b.lora.experts[0][trace.layers[0].lora_routing->expert_of(0)].up.has_grad());
}

TEST(Block, FiniteDifferenceThroughBlock) {
    auto b = fresh_block(50);
    Rng rng(51);
    wake_experts(b, rng);
    auto x = random_tensor({kTokens, 16}, rng);
    auto f = [&]() {
        Rng noise(52);  // identical Gumbel draws on every evaluation
        BlockContext ctx{Mode::Train, kGrid, 1.0, &noise};
        GatingTrace trace;
        auto y = block_forward(b, x, ctx, trace);
        auto drift = ops::sub(trace.layers[0].lora_mask, Tensor::from({1}, {0.3}));
        return ops::add(ops::mean(ops::square(y)), ops::sum(ops::square(drift)));
    };
    std::vector<Tensor> leaves{b.lora.router.weight, b.adapter.router.weight, b.lora_gate.w1, b.lora_gate.b2,
                               b.adapter_gate.w2,   b.lora.experts[2][1].down, b.adapter.experts[1].spatial};
    EXPECT_LE(finite_diff_check_many(f, leaves, 12, 53), 1e-4);
}

TEST(Block, ShapeGuards) {
    auto b = fresh_block(60);
    BlockContext ctx{Mode::Infer, kGrid};
    GatingTrace trace;
    EXPECT_THROW(block_forward(b, Tensor::zeros({kTokens, 8}), ctx, trace), ShapeError);
    auto cfg = small_config();
    cfg.heads = 3;
    EXPECT_THROW(fresh_block(61, cfg), ConfigError);
}
