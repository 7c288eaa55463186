// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "model/losses.hpp"

#include <cmath>

#include "core/errors.hpp"
#include "core/ops.hpp"

namespace smoe::loss {

void LossWeights::validate() const {
    if (!(lambda_balance >= 0.0)) throw ConfigError("lambda_balance must be >= 0");
    if (!(lambda_usage >= 0.0)) throw ConfigError("lambda_usage must be >= 0");
    if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in (0, 1]");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
}

Tensor router_mass(const Routing& routing) { return ops::sum_rows(routing.gates); }

BalanceResult balance_loss(const std::vector<Tensor>& masses, BalanceVariant variant) {
    BalanceResult out{Tensor::scalar(0.0), false};
    for (const auto& q : masses) {
        double total = 0.0;
        for (double v : q.data()) total += v;
        if (total == 0.0) {
            out.degenerate = true;
            continue;
        }
        auto mu = ops::mean(q);
        auto denom = variant == BalanceVariant::Cv2 ? ops::square(mu) : mu;
        out.value = ops::add(out.value, ops::mul(ops::variance(q), ops::reciprocal(denom)));
    }
    return out;
}

BalanceResult balance_loss(const std::vector<const GatingTrace*>& traces, BalanceVariant variant) {
    if (traces.empty()) return {Tensor::scalar(0.0), true};
    const std::size_t layers = traces.front()->size();
    struct Pool {
        std::optional<Tensor> mass;
        std::size_t rows = 0;
    };
    std::vector<Pool> lora(layers), adapter(layers);
    auto add = [](Pool& acc, const Routing& r) {
        auto q = router_mass(r);
        acc.mass = acc.mass ? ops::add(*acc.mass, q) : q;
        acc.rows += r.rows;
    };
    for (const auto* t : traces) {
        if (t->size() != layers) throw ShapeError("balance_loss: traces differ in depth");
        for (std::size_t l = 0; l < layers; ++l) {
            if (t->layers[l].lora_routing) add(lora[l], *t->layers[l].lora_routing);
            if (t->layers[l].adapter_routing) add(adapter[l], *t->layers[l].adapter_routing);
        }
    }
    std::vector<Tensor> masses;
    bool missing = false;
    for (auto* pools : {&lora, &adapter})
        for (auto& p : *pools) {
            if (p.mass)
                masses.push_back(ops::scale(*p.mass, 1.0 / static_cast<double>(p.rows)));
            else
                missing = true;
        }
    auto out = balance_loss(masses, variant);
    out.degenerate = out.degenerate || missing;
    return out;
}

namespace {

Tensor mean_mask(const GatingTrace& trace, bool lora) {
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& l : trace.layers) acc = ops::add(acc, ops::sum(lora ? l.lora_mask : l.adapter_mask));
    return ops::scale(acc, 1.0 / static_cast<double>(trace.size()));
}

}  // namespace

Tensor usage_loss(const GatingTrace& trace, double gamma) {
    if (trace.size() == 0) throw ShapeError("usage_loss: empty trace");
    auto lora = ops::square(ops::add_scalar(mean_mask(trace, true), -gamma));
    auto adapter = ops::square(ops::add_scalar(mean_mask(trace, false), -gamma));
    return ops::add(lora, adapter);
}

Tensor usage_loss(const std::vector<const GatingTrace*>& traces, double gamma) {
    if (traces.empty()) return Tensor::scalar(0.0);
    Tensor acc = Tensor::scalar(0.0);
    for (const auto* t : traces) acc = ops::add(acc, usage_loss(*t, gamma));
    return ops::scale(acc, 1.0 / static_cast<double>(traces.size()));
}

Tensor disparity_loss(const std::vector<Tensor>& predictions, const Tensor& gt, double beta,
                      const std::optional<Tensor>& valid) {
    if (predictions.empty()) throw ShapeError("disparity_loss: no predictions");
    if (valid && valid->shape() != gt.shape()) {
        throw ShapeError("disparity_loss: mask " + shape_str(valid->shape()) + " vs ground truth " +
                         shape_str(gt.shape()));
    }
    double count = static_cast<double>(gt.numel());
    if (valid) {
        count = 0.0;
        for (double v : valid->data()) count += v != 0.0 ? 1.0 : 0.0;
    }
    if (count == 0.0) return Tensor::scalar(0.0);

    const std::size_t n = predictions.size();
    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (predictions[i].shape() != gt.shape()) {
            throw ShapeError("disparity_loss: prediction " + shape_str(predictions[i].shape()) +
                             " vs ground truth " + shape_str(gt.shape()));
        }
        auto err = ops::abs(ops::sub(predictions[i], gt));
        if (valid) err = ops::mul(err, *valid);
        const double weight = std::pow(beta, static_cast<double>(n - 1 - i));
        acc = ops::add(acc, ops::scale(ops::sum(err), weight / count));
    }
    return acc;
}

Tensor total_loss(const Tensor& disp, const Tensor& balance, const Tensor& usage, const LossWeights& w) {
    return ops::add(disp, ops::add(ops::scale(balance, w.lambda_balance), ops::scale(usage, w.lambda_usage)));
}

}  // namespace smoe::loss
