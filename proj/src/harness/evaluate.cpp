// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "harness/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "core/errors.hpp"
#include "core/rng.hpp"
#include "harness/csv.hpp"

namespace smoe {

namespace {

struct RoutingSummary {
    long expert = -1;
    double gate = 0.0;
};

RoutingSummary summarise(const std::optional<Routing>& routing, std::size_t experts, double mask,
                         std::vector<double>* freq) {
    if (!routing) return {};
    std::vector<std::size_t> hits(experts, 0);
    double gate = 0.0;
    for (std::size_t r = 0; r < routing->rows; ++r) {
        for (std::size_t s = 0; s < routing->top_k; ++s) ++hits[routing->expert_of(r, s)];
        gate += routing->gates[r * experts + routing->expert_of(r, 0)];
    }
    const double picks = static_cast<double>(routing->rows * routing->top_k);
    if (freq)
        for (std::size_t e = 0; e < experts; ++e) (*freq)[e] += mask * static_cast<double>(hits[e]) / picks;
    RoutingSummary out;
    out.expert = static_cast<long>(std::max_element(hits.begin(), hits.end()) - hits.begin());
    out.gate = gate / static_cast<double>(routing->rows);
    return out;
}

}  // namespace

MetricsReport evaluate(const StereoModel& model, const data::Dataset& dataset, const EvalOptions& options) {
    const auto& cfg = model.config;
    const std::size_t layers = cfg.layers;
    const std::size_t m = cfg.block.lora_ranks.size(), n = cfg.block.adapter_kernels.size();
    MetricsReport r;
    r.samples = dataset.size();
    r.lora_activation.assign(layers, std::vector<double>(m, 0.0));
    r.adapter_activation.assign(layers, std::vector<double>(n, 0.0));
    r.lora_kept_per_layer.assign(layers, 0.0);
    r.adapter_kept_per_layer.assign(layers, 0.0);

    NoGradScope no_grad;
    Rng noise(options.noise_seed);
    ForwardOptions fo;
    fo.mode = options.mode;
    fo.gumbel_temperature = options.gumbel_temperature;
    fo.noise = &noise;
    double abs_err = 0.0, bad[3] = {0.0, 0.0, 0.0};
    std::uint64_t macs_total = 0;
    std::size_t views = 0;
    for (std::size_t si = 0; si < dataset.size(); ++si) {
        const auto& s = dataset.samples[si];
        Tensor pred;
        if (options.predictor) {
            pred = options.predictor(s);
        } else {
            MacScope scope;
            auto out = stereo_forward(model, s.left_image(), s.right_image(), fo);
            macs_total += scope.elapsed();
            pred = out.disparities.back();
            const GatingTrace* traces[2] = {&out.left_trace, &out.right_trace};
            for (std::size_t v = 0; v < 2; ++v) {
                ++views;
                for (std::size_t l = 0; l < layers; ++l) {
                    const auto& lt = traces[v]->layers[l];
                    const double lm = lt.lora_mask_value(), am = lt.adapter_mask_value();
                    r.lora_kept_per_layer[l] += lm;
                    r.adapter_kept_per_layer[l] += am;
                    auto ls = summarise(lt.lora_routing, m, lm, &r.lora_activation[l]);
                    auto as = summarise(lt.adapter_routing, n, am, &r.adapter_activation[l]);
                    if (options.traces) {
                        options.traces->push_back(
                            {si, v, l, lm, am, ls.expert, as.expert, ls.gate, as.gate});
                    }
                }
            }
        }
        if (pred.shape() != Shape{s.height, s.width}) {
            throw ShapeError("evaluate: prediction " + shape_str(pred.shape()) + " does not match the sample");
        }
        for (std::size_t i = 0; i < s.disparity.size(); ++i) {
            if (!s.valid[i]) continue;
            const double e = std::abs(pred[i] - static_cast<double>(s.disparity[i]));
            abs_err += e;
            for (int t = 0; t < 3; ++t) bad[t] += e > static_cast<double>(t + 1) ? 1.0 : 0.0;
            ++r.valid_pixels;
        }
    }
    if (r.valid_pixels > 0) {
        const double px = static_cast<double>(r.valid_pixels);
        r.epe = abs_err / px;
        r.bad1 = bad[0] / px;
        r.bad2 = bad[1] / px;
        r.bad3 = bad[2] / px;
    }
    if (views > 0) {
        const double v = static_cast<double>(views);
        for (std::size_t l = 0; l < layers; ++l) {
            r.lora_kept_per_layer[l] /= v;
            r.adapter_kept_per_layer[l] /= v;
            for (auto& f : r.lora_activation[l]) f /= v;
            for (auto& f : r.adapter_activation[l]) f /= v;
            r.kept_ratio_lora += r.lora_kept_per_layer[l] / static_cast<double>(layers);
            r.kept_ratio_adapter += r.adapter_kept_per_layer[l] / static_cast<double>(layers);
        }
        r.kept_ratio = 0.5 * (r.kept_ratio_lora + r.kept_ratio_adapter);
        r.activated_count = (r.kept_ratio_lora + r.kept_ratio_adapter) * static_cast<double>(layers);
        r.macs_per_view = macs_total / views;
    }
    return r;
}

nlohmann::json report_to_json(const MetricsReport& r) {
    return {{"samples", r.samples},
            {"valid_pixels", r.valid_pixels},
            {"epe", r.epe},
            {"bad1", r.bad1},
            {"bad2", r.bad2},
            {"bad3", r.bad3},
            {"kept_ratio_lora", r.kept_ratio_lora},
            {"kept_ratio_adapter", r.kept_ratio_adapter},
            {"kept_ratio", r.kept_ratio},
            {"activated_count", r.activated_count},
            {"macs_per_view", r.macs_per_view},
            {"lora_kept_per_layer", r.lora_kept_per_layer},
            {"adapter_kept_per_layer", r.adapter_kept_per_layer},
            {"lora_activation", r.lora_activation},
            {"adapter_activation", r.adapter_activation}};
}

void write_activation_csv(const MetricsReport& r, const std::filesystem::path& path) {
    CsvWriter csv(path, {"family", "layer", "expert", "frequency"});
    auto dump = [&](const char* family, const std::vector<std::vector<double>>& mat) {
        for (std::size_t l = 0; l < mat.size(); ++l)
            for (std::size_t e = 0; e < mat[l].size(); ++e) {
                csv << family << l << e << mat[l][e];
                csv.end_row();
            }
    };
    dump("lora", r.lora_activation);
    dump("adapter", r.adapter_activation);
}

void write_report(const MetricsReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "metrics.json");
        f << report_to_json(r).dump(2) << '\n';
        if (!f) throw IoError("failed writing " + (dir / "metrics.json").string());
    }
    CsvWriter csv(dir / "metrics.csv", {"samples", "valid_pixels", "epe", "bad1", "bad2", "bad3", "kept_ratio_lora",
                                        "kept_ratio_adapter", "kept_ratio", "activated_count", "macs_per_view"});
    csv << r.samples << r.valid_pixels << r.epe << r.bad1 << r.bad2 << r.bad3 << r.kept_ratio_lora
        << r.kept_ratio_adapter << r.kept_ratio << r.activated_count << r.macs_per_view;
    csv.end_row();
    write_activation_csv(r, dir / "activation.csv");
}

void write_trace_csv(const std::vector<TraceRow>& rows, const std::filesystem::path& path) {
    CsvWriter csv(path, {"sample", "view", "layer", "lora_mask", "adapter_mask", "lora_expert", "adapter_expert",
                         "lora_gate", "adapter_gate"});
    for (const auto& t : rows) {
        csv << t.sample << t.view << t.layer << t.lora_mask << t.adapter_mask << t.lora_expert << t.adapter_expert
            << t.lora_gate << t.adapter_gate;
        csv.end_row();
    }
}

}  // namespace smoe
