// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "harness/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "core/errors.hpp"

namespace smoe {

using nlohmann::json;

void RunConfig::validate() const {
    model.validate();
    loss.validate();
    if (train.batch == 0) throw ConfigError("batch must be >= 1");
    if (!(train.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(train.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(train.warmup_fraction >= 0.0 && train.warmup_fraction < 1.0)) {
        throw ConfigError("warmup_fraction must lie in [0, 1)");
    }
    if (!(train.grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0 (0 disables clipping)");
    if (!(train.gumbel_tau_start > 0.0 && train.gumbel_tau_end > 0.0)) {
        throw ConfigError("gumbel temperatures must be positive");
    }
    if (!(pretrain.mask_ratio > 0.0 && pretrain.mask_ratio < 1.0)) {
        throw ConfigError("pretrain_mask_ratio must lie in (0, 1)");
    }
    if (data.height != model.image_height || data.width != model.image_width || data.channels != model.channels) {
        throw ConfigError("dataset image shape must match the model image shape");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    if (dataset_size < 2) throw ConfigError("dataset_size must be >= 2");
    if (model.block.top_k == 0 || model.block.top_k > model.block.lora_ranks.size() ||
        model.block.top_k > model.block.adapter_kernels.size()) {
        throw ConfigError("top_k must lie in [1, pool size]");
    }
    if (!(model.block.router_temperature > 0.0)) throw ConfigError("router_temperature must be positive");
    for (auto r : model.block.lora_ranks)
        if (r == 0 || 2 * r > model.block.dim) throw ConfigError("lora rank " + std::to_string(r) + " not in [1, dim/2]");
    for (auto k : model.block.adapter_kernels)
        if (k % 2 == 0) throw ConfigError("adapter kernel " + std::to_string(k) + " must be odd");
    try {
        data.validate();
    } catch (const GenerationError& e) {
        throw ConfigError(e.what());
    }
}

namespace {

std::string granularity_name(RoutingGranularity g) {
    return g == RoutingGranularity::PerSample ? "per-sample" : "per-token";
}

std::string variant_name(loss::BalanceVariant v) { return v == loss::BalanceVariant::Cv2 ? "cv2" : "variance"; }

std::uint64_t non_negative(const json& v) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError("expected a non-negative integer");
}

json targets_json(const std::array<bool, 3>& t) {
    json out = json::array();
    const char* names[] = {"q", "k", "v"};
    for (std::size_t i = 0; i < 3; ++i)
        if (t[i]) out.push_back(names[i]);
    return out;
}

}  // namespace

json config_to_json(const RunConfig& c) {
    const auto& m = c.model;
    const auto& b = m.block;
    json j;
    j["image_height"] = m.image_height;
    j["image_width"] = m.image_width;
    j["channels"] = m.channels;
    j["patch"] = m.patch;
    j["layers"] = m.layers;
    j["dim"] = b.dim;
    j["heads"] = b.heads;
    j["mlp_hidden"] = b.mlp_hidden;
    j["lora_ranks"] = b.lora_ranks;
    j["adapter_kernels"] = b.adapter_kernels;
    j["adapter_bottleneck"] = b.adapter_bottleneck;
    j["router_temperature"] = b.router_temperature;
    j["top_k"] = b.top_k;
    j["routing_granularity"] = granularity_name(b.granularity);
    j["lora_targets"] = targets_json(b.lora_targets);
    j["gate_hidden"] = b.gate_hidden;
    j["feature_channels"] = m.feature_channels;
    j["d_max"] = m.d_max;
    j["lookup_radius"] = m.lookup_radius;
    j["iterations"] = m.iterations;
    j["update_hidden"] = m.update_hidden;
    j["experts_enabled"] = c.experts_enabled;
    j["lambda_balance"] = c.loss.lambda_balance;
    j["lambda_usage"] = c.loss.lambda_usage;
    j["beta"] = c.loss.beta;
    j["gamma"] = c.loss.gamma;
    j["balance_variant"] = variant_name(c.balance_variant);
    j["steps"] = c.train.steps;
    j["batch"] = c.train.batch;
    j["learning_rate"] = c.train.learning_rate;
    j["weight_decay"] = c.train.weight_decay;
    j["warmup_fraction"] = c.train.warmup_fraction;
    j["grad_clip"] = c.train.grad_clip;
    j["adam_beta1"] = c.train.adam_beta1;
    j["adam_beta2"] = c.train.adam_beta2;
    j["adam_eps"] = c.train.adam_eps;
    j["gumbel_tau_start"] = c.train.gumbel_tau_start;
    j["gumbel_tau_end"] = c.train.gumbel_tau_end;
    j["pretrain_steps"] = c.pretrain.steps;
    j["pretrain_mask_ratio"] = c.pretrain.mask_ratio;
    j["pretrain_learning_rate"] = c.pretrain.learning_rate;
    j["disparity_min"] = c.data.disparity_min;
    j["disparity_max"] = c.data.disparity_max;
    j["num_rects"] = c.data.num_rects;
    j["dot_size"] = c.data.dot_size;
    j["dataset_size"] = c.dataset_size;
    j["train_fraction"] = c.train_fraction;
    j["seed"] = c.seed;
    j["data_seed"] = c.data_seed;
    j["noise_seed"] = c.noise_seed;
    j["backbone_checkpoint"] = c.backbone_checkpoint;
    return j;
}

RunConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    auto& m = c.model;
    auto& b = m.block;

    using Setter = std::function<void(const json&)>;
    auto size = [](std::size_t& dst) -> Setter {
        return [&dst](const json& v) { dst = non_negative(v); };
    };
    auto u64 = [](std::uint64_t& dst) -> Setter {
        return [&dst](const json& v) { dst = non_negative(v); };
    };
    auto real = [](double& dst) -> Setter {
        return [&dst](const json& v) {
            if (!v.is_number()) throw ConfigError("expected a number");
            dst = v.get<double>();
        };
    };
    auto flag = [](bool& dst) -> Setter {
        return [&dst](const json& v) {
            if (!v.is_boolean()) throw ConfigError("expected true or false");
            dst = v.get<bool>();
        };
    };
    auto sizes = [](std::vector<std::size_t>& dst) -> Setter {
        return [&dst](const json& v) {
            if (!v.is_array() || v.empty()) throw ConfigError("expected a non-empty integer array");
            dst.clear();
            for (const auto& e : v) dst.push_back(non_negative(e));
        };
    };

    const std::map<std::string, Setter> setters = {
        {"image_height", size(m.image_height)},
        {"image_width", size(m.image_width)},
        {"channels", size(m.channels)},
        {"patch", size(m.patch)},
        {"layers", size(m.layers)},
        {"dim", size(b.dim)},
        {"heads", size(b.heads)},
        {"mlp_hidden", size(b.mlp_hidden)},
        {"lora_ranks", sizes(b.lora_ranks)},
        {"adapter_kernels", sizes(b.adapter_kernels)},
        {"adapter_bottleneck", size(b.adapter_bottleneck)},
        {"router_temperature", real(b.router_temperature)},
        {"top_k", size(b.top_k)},
        {"routing_granularity",
         [&b](const json& v) {
             if (v == "per-token")
                 b.granularity = RoutingGranularity::PerToken;
             else if (v == "per-sample")
                 b.granularity = RoutingGranularity::PerSample;
             else
                 throw ConfigError("routing_granularity must be \"per-token\" or \"per-sample\"");
         }},
        {"lora_targets",
         [&b](const json& v) {
             if (!v.is_array() || v.empty()) throw ConfigError("lora_targets must be a non-empty array");
             b.lora_targets = {false, false, false};
             for (const auto& e : v) {
                 if (e == "q")
                     b.lora_targets[0] = true;
                 else if (e == "k")
                     b.lora_targets[1] = true;
                 else if (e == "v")
                     b.lora_targets[2] = true;
                 else
                     throw ConfigError("lora_targets entries must be \"q\", \"k\" or \"v\"");
             }
         }},
        {"gate_hidden", size(b.gate_hidden)},
        {"feature_channels", size(m.feature_channels)},
        {"d_max", size(m.d_max)},
        {"lookup_radius", size(m.lookup_radius)},
        {"iterations", size(m.iterations)},
        {"update_hidden", size(m.update_hidden)},
        {"experts_enabled", flag(c.experts_enabled)},
        {"lambda_balance", real(c.loss.lambda_balance)},
        {"lambda_usage", real(c.loss.lambda_usage)},
        {"beta", real(c.loss.beta)},
        {"gamma", real(c.loss.gamma)},
        {"balance_variant",
         [&c](const json& v) {
             if (v == "variance")
                 c.balance_variant = loss::BalanceVariant::Variance;
             else if (v == "cv2")
                 c.balance_variant = loss::BalanceVariant::Cv2;
             else
                 throw ConfigError("balance_variant must be \"variance\" or \"cv2\"");
         }},
        {"steps", size(c.train.steps)},
        {"batch", size(c.train.batch)},
        {"learning_rate", real(c.train.learning_rate)},
        {"weight_decay", real(c.train.weight_decay)},
        {"warmup_fraction", real(c.train.warmup_fraction)},
        {"grad_clip", real(c.train.grad_clip)},
        {"adam_beta1", real(c.train.adam_beta1)},
        {"adam_beta2", real(c.train.adam_beta2)},
        {"adam_eps", real(c.train.adam_eps)},
        {"gumbel_tau_start", real(c.train.gumbel_tau_start)},
        {"gumbel_tau_end", real(c.train.gumbel_tau_end)},
        {"pretrain_steps", size(c.pretrain.steps)},
        {"pretrain_mask_ratio", real(c.pretrain.mask_ratio)},
        {"pretrain_learning_rate", real(c.pretrain.learning_rate)},
        {"disparity_min", size(c.data.disparity_min)},
        {"disparity_max", size(c.data.disparity_max)},
        {"num_rects", size(c.data.num_rects)},
        {"dot_size", size(c.data.dot_size)},
        {"dataset_size", size(c.dataset_size)},
        {"train_fraction", real(c.train_fraction)},
        {"seed", u64(c.seed)},
        {"data_seed", u64(c.data_seed)},
        {"noise_seed", u64(c.noise_seed)},
        {"backbone_checkpoint",
         [&c](const json& v) {
             if (!v.is_string()) throw ConfigError("expected a string");
             c.backbone_checkpoint = v.get<std::string>();
         }},
    };
    for (const auto& [key, value] : j.items()) {
        auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown config key \"" + key + "\"");
        try {
            it->second(value);
        } catch (const ConfigError& e) {
            throw ConfigError("config key \"" + key + "\": " + e.what());
        }
    }
    c.data.height = m.image_height;
    c.data.width = m.image_width;
    c.data.channels = m.channels;
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

void save_config(const RunConfig& config, const std::string& path) {
    std::ofstream f(path);
    f << config_to_json(config).dump(2) << '\n';
    if (!f) throw IoError("failed writing " + path);
}

}  // namespace smoe
