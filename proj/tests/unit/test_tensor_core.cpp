// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "core/errors.hpp"
#include "core/gradcheck.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"

using namespace smoe;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Direct nested-loop cross-correlation with zero padding; independent of the
// im2col/GEMM path under test.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w) {
    const auto cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0), k = w.dim(2);
    const long pad = static_cast<long>(k / 2);
    std::vector<double> out(cout * h * wd, 0.0);
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < wd; ++xx) {
                double acc = 0.0;
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t dy = 0; dy < k; ++dy)
                        for (std::size_t dx = 0; dx < k; ++dx) {
                            const long sy = static_cast<long>(y + dy) - pad;
                            const long sx = static_cast<long>(xx + dx) - pad;
                            if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(wd))
                                continue;
                            acc += w[((o * cin + c) * k + dy) * k + dx] *
                                   x[(c * h + static_cast<std::size_t>(sy)) * wd + static_cast<std::size_t>(sx)];
                        }
                out[(o * h + y) * wd + xx] = acc;
            }
    return out;
}

}  // namespace

// -- matmul -------------------------------------------------------------------

TEST(Matmul, IdentityTimesIdentity) {
    auto c = ops::matmul(Tensor::eye(2), Tensor::eye(2));
    EXPECT_EQ(c.shape(), (Shape{2, 2}));
    EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 0, 0, 1}));
}

TEST(Matmul, HandArithmetic) {
    auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from({2, 1}, {1, 1});
    auto c = ops::matmul(a, b);
    EXPECT_EQ(c.shape(), (Shape{2, 1}));
    EXPECT_DOUBLE_EQ(c[0], 3.0);
    EXPECT_DOUBLE_EQ(c[1], 7.0);
}

TEST(Matmul, ZerosAnnihilate) {
    Rng rng(1);
    auto c = ops::matmul(random_tensor({3, 4}, rng), Tensor::zeros({4, 5}));
    for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos);
        EXPECT_NE(msg.find("[4x5]"), std::string::npos);
    }
}

TEST(Matmul, BackwardRules) {
    Rng rng(2);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    Tape tape;
    {
        TapeScope s(tape);
        tape.backward(ops::sum(ops::matmul(a, b)));
    }
    // dA = 1 * B^T: row i of dA is the row sums of B.
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t p = 0; p < 4; ++p)
            EXPECT_NEAR(a.grad()[i * 4 + p], b[p * 2] + b[p * 2 + 1], 1e-12);
    // dB = A^T * 1: column sums of A.
    for (std::size_t p = 0; p < 4; ++p) {
        double col = 0.0;
        for (std::size_t i = 0; i < 3; ++i) col += a[i * 4 + p];
        EXPECT_NEAR(b.grad()[p * 2], col, 1e-12);
    }
}

// -- conv2d -------------------------------------------------------------------

TEST(Conv2d, UnitKernelIsIdentity) {
    Rng rng(3);
    auto x = random_tensor({1, 4, 5}, rng, false);
    auto y = ops::conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), 0);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, ZeroKernelGivesZero) {
    Rng rng(4);
    auto y = ops::conv2d(random_tensor({2, 5, 5}, rng, false), Tensor::zeros({3, 2, 3, 3}), 1);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, BoxKernelOnDeltaMakesPlateau) {
    auto x = Tensor::zeros({1, 7, 7});
    x.mutable_data()[3 * 7 + 3] = 1.0;
    auto w = Tensor::full({1, 1, 3, 3}, 0.5);
    auto y = ops::conv2d(x, w, 1);
    const auto oracle = conv_oracle(x, w);
    for (std::size_t r = 0; r < 7; ++r)
        for (std::size_t c = 0; c < 7; ++c) {
            const bool inside = r >= 2 && r <= 4 && c >= 2 && c <= 4;
            EXPECT_DOUBLE_EQ(y[r * 7 + c], inside ? 0.5 : 0.0);
            EXPECT_DOUBLE_EQ(y[r * 7 + c], oracle[r * 7 + c]);
        }
}

TEST(Conv2d, MatchesDirectConvolutionOracle) {
    Rng rng(5);
    for (std::size_t k : {1u, 3u, 5u, 7u}) {
        auto x = random_tensor({3, 6, 9}, rng, false);
        auto w = random_tensor({2, 3, k, k}, rng, false);
        auto y = ops::conv2d(x, w, (k - 1) / 2);
        const auto oracle = conv_oracle(x, w);
        for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(y[i], oracle[i], 1e-12) << "k=" << k;
    }
}

TEST(Conv2d, EvenKernelRejected) {
    EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 2, 2}), 0), ConfigError);
}

TEST(Conv2d, WrongPaddingRejected) {
    EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 0), ConfigError);
}

TEST(Conv2d, SparsePositionsMatchDense) {
    Rng rng(6);
    auto x = random_tensor({4, 5, 6}, rng, false);
    auto w = random_tensor({3, 4, 5, 5}, rng, false);
    auto dense = ops::conv2d(x, w, 2);
    const std::vector<std::size_t> pos{0, 7, 13, 29};
    auto sparse = ops::conv2d_at(x, w, pos);
    ASSERT_EQ(sparse.shape(), (Shape{4, 3}));
    for (std::size_t p = 0; p < pos.size(); ++p)
        for (std::size_t o = 0; o < 3; ++o) EXPECT_NEAR(sparse[p * 3 + o], dense[o * 30 + pos[p]], 1e-12);
}

// -- softmax ------------------------------------------------------------------

TEST(Softmax, EqualLogitsAreUniform) {
    for (double tau : {0.1, 1.0, 5.0}) {
        auto y = ops::softmax(Tensor::full({1, 4}, 2.5), tau);
        for (double v : y.data()) EXPECT_NEAR(v, 0.25, 1e-15);
    }
}

TEST(Softmax, TemperatureFiveScalarOracle) {
    auto y = ops::softmax(Tensor::from({1, 4}, {5, 0, 0, 0}), 5.0);
    const double e = std::exp(1.0);
    EXPECT_NEAR(y[0], e / (e + 3.0), 1e-15);
    EXPECT_NEAR(y[0], 0.47536, 1e-4);
    for (int j = 1; j < 4; ++j) EXPECT_NEAR(y[j], 0.17488, 1e-4);
}

TEST(Softmax, LowTemperatureApproachesOneHot) {
    auto y = ops::softmax(Tensor::from({1, 4}, {0.3, 0.9, 0.1, 0.5}), 1e-3);
    EXPECT_NEAR(y[1], 1.0, 1e-2);
    for (int j : {0, 2, 3}) EXPECT_NEAR(y[j], 0.0, 1e-2);
}

TEST(Softmax, NonPositiveTemperatureRejected) {
    EXPECT_THROW(ops::softmax(Tensor::zeros({1, 3}), 0.0), ConfigError);
    EXPECT_THROW(ops::softmax(Tensor::zeros({1, 3}), -1.0), ConfigError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_tensor({5, 7}, rng, false, 10.0);
        const double shift = rng.uniform(-100.0, 100.0);
        auto y = ops::softmax(x, 1.0 + trial * 0.3);
        auto ys = ops::softmax(ops::add_scalar(x, shift), 1.0 + trial * 0.3);
        for (std::size_t r = 0; r < 5; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < 7; ++j) {
                s += y[r * 7 + j];
                EXPECT_NEAR(y[r * 7 + j], ys[r * 7 + j], 1e-12);
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

// -- backward -----------------------------------------------------------------

TEST(Backward, SumGivesOnes) {
    auto x = Tensor::from({3}, {1, -2, 5}, true);
    Tape tape;
    {
        TapeScope s(tape);
        backward(ops::sum(x));
    }
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquares) {
    auto x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    {
        TapeScope s(tape);
        backward(ops::sum(ops::square(x)));
    }
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossRejected) {
    auto x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    TapeScope s(tape);
    auto y = ops::square(x);
    EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, RunsOnlyOnce) {
    auto x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    TapeScope s(tape);
    auto loss = ops::sum(x);
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), ContractError);
}

TEST(Backward, FrozenTensorsNeverGetGrad) {
    Rng rng(8);
    auto frozen = random_tensor({3, 3}, rng, false);
    auto w = random_tensor({3, 3}, rng, true);
    Tape tape;
    {
        TapeScope s(tape);
        tape.backward(ops::sum(ops::gelu(ops::matmul(frozen, w))));
    }
    EXPECT_FALSE(frozen.has_grad());
    EXPECT_TRUE(w.has_grad());
}

TEST(Backward, ReachableLeavesGetBuffersEvenWhenZero) {
    auto a = Tensor::from({2}, {1, 2}, true);
    auto b = Tensor::from({2}, {3, 4}, true);
    Tape tape;
    {
        TapeScope s(tape);
        // b only feeds a zero-scaled branch
        tape.backward(ops::sum(ops::add(a, ops::scale(b, 0.0))));
    }
    ASSERT_TRUE(b.has_grad());
    for (double g : b.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, UntrackedWithoutTape) {
    auto x = Tensor::from({2}, {1, 2}, true);
    auto y = ops::square(x);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
    Rng rng(9);
    auto x = random_tensor({4, 6}, rng);
    auto w = random_tensor({5, 6}, rng, false);
    auto g = random_tensor({5}, rng, false);
    auto b = random_tensor({5}, rng, false);
    auto f = [&] {
        auto h = ops::layer_norm(ops::gelu(ops::linear(x, w)), g, b);
        return ops::mean(ops::square(ops::softmax(h, 2.0)));
    };
    EXPECT_LE(finite_diff_check(f, x), 1e-4);
}

// -- finite_diff_check ----------------------------------------------------------

TEST(FiniteDiff, SumIsExact) {
    Rng rng(10);
    auto x = random_tensor({3, 4}, rng);
    EXPECT_LE(finite_diff_check([&] { return ops::sum(x); }, x), 1e-10);
}

TEST(FiniteDiff, SoftmaxThenSumOfSquares) {
    Rng rng(11);
    auto x = random_tensor({3, 5}, rng);
    EXPECT_LE(finite_diff_check([&] { return ops::sum(ops::square(ops::softmax(x, 1.5))); }, x), 1e-4);
}

TEST(FiniteDiff, RefinementStepsPastANearbyKink) {
    // |x| with the 1e-4 stencil reaching across 0 from x = 5e-5.
    auto x = Tensor::from({1}, {5e-5}, true);
    auto f = [&] { return ops::sum(ops::abs(x)); };
    EXPECT_GT(finite_diff_check(f, x), 0.1);
    const auto r = finite_diff_check_refined(f, {x}, 1, 1, 1e-4);
    EXPECT_EQ(r.probes, 1u);
    EXPECT_EQ(r.refined, 1u);
    EXPECT_LE(r.max_error, 1e-10);
}

TEST(FiniteDiff, RefinementStillCatchesAWrongGradient) {
    // The second factor is rebuilt as a constant, so the taped gradient misses half of d(x^2)/dx.
    Rng rng(12);
    auto x = random_tensor({6}, rng);
    auto f = [&] {
        auto frozen = Tensor::from({6}, std::vector<double>(x.data().begin(), x.data().end()));
        return ops::sum(ops::mul(x, frozen));
    };
    const auto r = finite_diff_check_refined(f, {x}, 6, 1, 1e-4);
    EXPECT_EQ(r.refined, 6u);
    EXPECT_GT(r.max_error, 0.4);
}

// Every differentiable op on randomized small shapes.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, AllOpsAgreeWithCentralDifferences) {
    Rng rng(100 + static_cast<std::uint64_t>(GetParam()));
    const std::size_t r = 2 + rng.below(3), c = 2 + rng.below(4);
    auto a = random_tensor({r, c}, rng);
    auto b = random_tensor({r, c}, rng);
    auto pos = Tensor::from({r, c}, [&] {
        std::vector<double> v(r * c);
        for (auto& e : v) e = rng.uniform(0.5, 2.0);
        return v;
    }(), true);
    auto w = random_tensor({3, c}, rng);
    auto bias = random_tensor({c}, rng);
    auto rows = random_tensor({r}, rng);
    auto s = random_tensor({1}, rng);
    auto gamma = random_tensor({c}, rng);
    auto beta = random_tensor({c}, rng);
    // weights for reducing tensors of varying shapes to a scalar
    auto reduce = [&](const Tensor& t) {
        std::vector<double> v(t.numel());
        Rng wr(77);
        for (auto& e : v) e = wr.normal();
        return ops::sum(ops::mul(t, Tensor::from(t.shape(), v)));
    };

    const std::vector<std::pair<const char*, ScalarFn>> cases = {
        {"add", [&] { return reduce(ops::add(a, b)); }},
        {"sub", [&] { return reduce(ops::sub(a, b)); }},
        {"mul", [&] { return reduce(ops::mul(a, b)); }},
        {"scale_by", [&] { return reduce(ops::scale_by(a, s)); }},
        {"relu", [&] { return reduce(ops::relu(a)); }},
        {"gelu", [&] { return reduce(ops::gelu(a)); }},
        {"exp", [&] { return reduce(ops::exp(a)); }},
        {"log", [&] { return reduce(ops::log(pos)); }},
        {"reciprocal", [&] { return reduce(ops::reciprocal(pos)); }},
        {"abs", [&] { return reduce(ops::abs(a)); }},
        {"add_bias", [&] { return reduce(ops::add_bias(a, bias)); }},
        {"scale_rows", [&] { return reduce(ops::scale_rows(a, rows)); }},
        {"matmul", [&] { return reduce(ops::matmul(a, ops::transpose(w))); }},
        {"linear", [&] { return reduce(ops::linear(a, w)); }},
        {"reshape", [&] { return reduce(ops::reshape(a, {c, r})); }},
        {"mean", [&] { return ops::mean(ops::square(a)); }},
        {"variance", [&] { return ops::variance(a); }},
        {"sum_rows", [&] { return reduce(ops::sum_rows(a)); }},
        {"mean_rows", [&] { return reduce(ops::mean_rows(a)); }},
        {"softmax", [&] { return reduce(ops::softmax(a, 0.7)); }},
        {"layer_norm", [&] { return reduce(ops::layer_norm(a, gamma, beta)); }},
        {"concat", [&] { return reduce(ops::concat_rows({a, b})); }},
        {"slice", [&] { return reduce(ops::slice_rows(a, 1, r - 1)); }},
        {"gather_rows", [&] { return reduce(ops::gather_rows(a, {r - 1, 0, r - 1})); }},
        {"scatter", [&] { return reduce(ops::scatter_add_rows(a, std::vector<std::size_t>(r, 1), 3)); }},
        {"gather", [&] { return reduce(ops::gather(a, std::vector<std::size_t>(r, c - 1))); }},
        {"top_k", [&] { return reduce(ops::top_k(a, 2).values); }},
    };
    for (const auto& [name, f] : cases) {
        for (auto leaf : {a, b, pos, w, bias, rows, s, gamma, beta}) leaf.clear_grad();
        // probe every leaf the case reads
        std::vector<Tensor> leaves;
        for (auto leaf : {a, b, pos, w, bias, rows, s, gamma, beta}) leaves.push_back(leaf);
        EXPECT_LE(finite_diff_check_many(f, leaves, 64, 5), 1e-4) << name;
    }
}

INSTANTIATE_TEST_SUITE_P(Seeded, OpGradient, ::testing::Range(0, 5));

TEST(OpGradient, ConvAndAttention) {
    Rng rng(12);
    auto x = random_tensor({2, 4, 5}, rng);
    auto w3 = random_tensor({3, 2, 3, 3}, rng);
    auto w5 = random_tensor({2, 2, 5, 5}, rng, true, 0.3);
    auto q = random_tensor({6, 8}, rng);
    auto k = random_tensor({6, 8}, rng);
    auto v = random_tensor({6, 8}, rng);
    auto reduce = [](const Tensor& t) {
        std::vector<double> c(t.numel());
        Rng wr(3);
        for (auto& e : c) e = wr.normal();
        return ops::sum(ops::mul(t, Tensor::from(t.shape(), c)));
    };
    auto conv = [&] { return reduce(ops::conv2d(x, w3, 1)); };
    EXPECT_LE(finite_diff_check_many(conv, {x, w3}, 1000, 1), 1e-4);
    auto conv_at = [&] { return reduce(ops::conv2d_at(x, w5, {0, 6, 19, 12})); };
    EXPECT_LE(finite_diff_check_many(conv_at, {x, w5}, 1000, 1), 1e-4);
    auto attn = [&] { return reduce(ops::multi_head_attention(q, k, v, 2)); };
    EXPECT_LE(finite_diff_check_many(attn, {q, k, v}, 1000, 1), 1e-4);
}

// -- top_k --------------------------------------------------------------------

TEST(TopK, SortedDescendingWithLowestIndexTieBreak) {
    auto x = Tensor::from({2, 5}, {1, 3, 3, 0, 2, 7, 7, 7, 7, 7});
    auto tk = ops::top_k(x, 3);
    EXPECT_EQ(tk.indices, (std::vector<std::size_t>{1, 2, 4, 0, 1, 2}));
    EXPECT_EQ(tk.values[0], 3.0);
    EXPECT_EQ(tk.values[2], 2.0);
}

TEST(TopK, InvalidKRejected) {
    EXPECT_THROW(ops::top_k(Tensor::zeros({1, 3}), 0), ShapeError);
    EXPECT_THROW(ops::top_k(Tensor::zeros({1, 3}), 4), ShapeError);
}

TEST(TopK, NoGradientThroughUnselected) {
    auto x = Tensor::from({1, 4}, {0.1, 0.9, 0.5, 0.2}, true);
    Tape tape;
    {
        TapeScope s(tape);
        tape.backward(ops::sum(ops::top_k(x, 1).values));
    }
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0, 0}));
}

TEST(MacCounter, CountsMatmulAndConv) {
    MacScope scope;
    ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({3, 4}));
    EXPECT_EQ(scope.elapsed(), 24u);
    ops::conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({3, 2, 3, 3}), 1);
    EXPECT_EQ(scope.elapsed(), 24u + 3u * 2u * 9u * 16u);
}
