// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/errors.hpp"
#include "core/rng.hpp"

namespace smoe {

namespace {

std::vector<std::vector<double>> analytic_grads(const ScalarFn& f, const std::vector<Tensor>& leaves) {
    for (auto leaf : leaves) {
        if (!leaf.requires_grad()) throw ContractError("finite_diff_check: leaf must require grad");
        leaf.clear_grad();
    }
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = f();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> grads;
    for (const auto& leaf : leaves) {
        if (leaf.has_grad()) {
            grads.emplace_back(leaf.grad().begin(), leaf.grad().end());
        } else {
            grads.emplace_back(leaf.numel(), 0.0);  // not reachable from the loss
        }
    }
    return grads;
}

double element_error(const ScalarFn& f, Tensor& x, double analytic, std::size_t i, double h) {
    NoGradScope untracked;
    auto values = x.mutable_data();
    const double saved = values[i];
    auto at = [&](double offset) {
        values[i] = saved + offset;
        return f().item();
    };
    const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
    values[i] = saved;
    return std::fabs(analytic - numeric) / (std::fabs(numeric) + 1e-8);
}

double probe_error(const ScalarFn& f, Tensor x, std::span<const double> analytic,
                   const std::vector<std::size_t>& probe, double h) {
    double worst = 0.0;
    for (auto i : probe) worst = std::max(worst, element_error(f, x, analytic[i], i, h));
    return worst;
}

std::vector<std::size_t> all_indices(const Tensor& x) {
    std::vector<std::size_t> idx(x.numel());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

std::vector<std::size_t> sample_indices(const Tensor& x, std::size_t per_tensor, Rng& rng) {
    auto idx = all_indices(x);
    if (idx.size() > per_tensor) {
        for (std::size_t i = 0; i < per_tensor; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
        idx.resize(per_tensor);
    }
    return idx;
}

}  // namespace

double finite_diff_check(const ScalarFn& f, Tensor x, double h) {
    return finite_diff_check(f, x, all_indices(x), h);
}

double finite_diff_check(const ScalarFn& f, Tensor x, const std::vector<std::size_t>& probe, double h) {
    const auto grads = analytic_grads(f, {x});
    return probe_error(f, x, grads[0], probe, h);
}

double finite_diff_check_many(const ScalarFn& f, const std::vector<Tensor>& leaves,
                              std::size_t per_tensor, std::uint64_t seed, double h) {
    const auto grads = analytic_grads(f, leaves);
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < leaves.size(); ++t) {
        worst = std::max(worst, probe_error(f, leaves[t], grads[t], sample_indices(leaves[t], per_tensor, rng), h));
    }
    return worst;
}

FiniteDiffReport finite_diff_check_refined(const ScalarFn& f, const std::vector<Tensor>& leaves,
                                           std::size_t per_tensor, std::uint64_t seed, double tolerance,
                                           const std::vector<double>& steps) {
    if (steps.empty()) throw ContractError("finite_diff_check_refined: no steps");
    const auto grads = analytic_grads(f, leaves);
    Rng rng(seed);
    FiniteDiffReport report;
    for (std::size_t t = 0; t < leaves.size(); ++t) {
        Tensor x = leaves[t];
        for (auto i : sample_indices(x, per_tensor, rng)) {
            ++report.probes;
            double best = element_error(f, x, grads[t][i], i, steps[0]);
            for (std::size_t s = 1; s < steps.size() && best > tolerance; ++s) {
                if (s == 1) ++report.refined;
                best = std::min(best, element_error(f, x, grads[t][i], i, steps[s]));
            }
            report.max_error = std::max(report.max_error, best);
        }
    }
    return report;
}

}  // namespace smoe
