// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver over the C API.
// Exit codes: 0 success, 2 config or usage error, 3 numeric failure, 1 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "smoe/smoe.h"

namespace fs = std::filesystem;

namespace {

struct Failure {
    smoe_status status;
};

void check(smoe_status s, const char* what) {
    if (s == SMOE_OK) return;
    std::fprintf(stderr, "smoe: %s failed (%s): %s\n", what, smoe_status_name(s), smoe_last_error());
    throw Failure{s};
}

int exit_code(smoe_status s) {
    switch (s) {
        case SMOE_OK: return 0;
        case SMOE_ERR_CONFIG: return 2;
        case SMOE_ERR_NUMERIC: return 3;
        default: return 1;
    }
}

template <typename T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<smoe_config, Deleter<smoe_config, smoe_config_free>>;
using ModelPtr = std::unique_ptr<smoe_model, Deleter<smoe_model, smoe_model_free>>;
using DatasetPtr = std::unique_ptr<smoe_dataset, Deleter<smoe_dataset, smoe_dataset_free>>;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> gamma;
    std::optional<std::size_t> steps;
    std::string out = ".";
    std::string data_dir;
};

ConfigPtr make_config(const Common& c, bool seed_is_data_seed = false) {
    smoe_config* raw = nullptr;
    if (c.config_path.empty())
        check(smoe_config_create(&raw), "creating default config");
    else
        check(smoe_config_load(c.config_path.c_str(), &raw), "loading config");
    ConfigPtr cfg(raw);
    std::string patch = "{";
    auto add = [&](const std::string& kv) { patch += (patch.size() > 1 ? "," : "") + kv; };
    if (c.seed) add(std::string(seed_is_data_seed ? "\"data_seed\":" : "\"seed\":") + std::to_string(*c.seed));
    if (c.gamma) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "\"gamma\":%.17g", *c.gamma);
        add(buf);
    }
    if (c.steps) add("\"steps\":" + std::to_string(*c.steps));
    patch += "}";
    check(smoe_config_merge_json(cfg.get(), patch.c_str()), "applying command-line overrides");
    return cfg;
}

DatasetPtr load_data(const std::string& dir) {
    if (dir.empty()) return nullptr;
    smoe_dataset* raw = nullptr;
    check(smoe_dataset_load(dir.c_str(), &raw), "loading dataset");
    return DatasetPtr(raw);
}

ModelPtr load_checkpoint(const std::string& path) {
    smoe_model* raw = nullptr;
    check(smoe_model_load(path.c_str(), &raw), "loading checkpoint");
    return ModelPtr(raw);
}

std::string json_string(const std::string& s) {
    std::string out = "\"";
    for (unsigned char ch : s) {
        if (ch == '"' || ch == '\\') {
            out += '\\';
            out += static_cast<char>(ch);
        } else if (ch < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\u%04x", ch);
            out += buf;
        } else {
            out += static_cast<char>(ch);
        }
    }
    return out + "\"";
}

std::string join(const fs::path& dir, const char* name) { return (dir / name).string(); }

void add_common(CLI::App* app, Common& c, bool with_gamma, bool with_steps) {
    app->add_option("--config", c.config_path, "Run config JSON (defaults when omitted)")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "Override the initialisation seed");
    if (with_gamma) app->add_option("--gamma", c.gamma, "Override the layer budget gamma");
    if (with_steps) app->add_option("--steps", c.steps, "Override the number of optimiser steps");
    app->add_option("--out", c.out, "Output directory")->capture_default_str();
    app->add_option("--data", c.data_dir, "Dataset directory from gen-data (generated from data_seed when omitted)")
        ->check(CLI::ExistingDirectory);
}

smoe_split parse_split(const std::string& s) { return s == "all" ? SMOE_SPLIT_ALL : SMOE_SPLIT_EVAL; }

int progress(const smoe_step_log* log, void*) {
    if (log->step % 100 == 0) {
        std::fprintf(stderr, "step %zu  total %.5f  disp %.5f  blc %.5f  usage %.5f  kept %.3f/%.3f\n", log->step,
                     log->total, log->disp, log->blc, log->usage, log->kept_ratio_lora, log->kept_ratio_adapter);
    }
    return 1;
}

void print_metrics(const smoe_metrics& m) {
    std::printf("samples %zu  EPE %.4f  bad1 %.4f  bad2 %.4f  bad3 %.4f\n", m.samples, m.epe, m.bad1, m.bad2, m.bad3);
    std::printf("kept ratio lora %.4f  adapter %.4f  activated modules %.3f  MACs/view %llu\n", m.kept_ratio_lora,
                m.kept_ratio_adapter, m.activated_count, static_cast<unsigned long long>(m.macs_per_view));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Selective mixture-of-experts stereo: data, training, evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", smoe_version());

    Common gen, pre, tr, sw;
    std::string eval_ckpt, eval_data, eval_out = ".", eval_mode = "infer", eval_split = "eval";
    std::string insp_ckpt, insp_data, insp_out = ".", insp_split = "eval";
    std::vector<double> sweep_gammas;

    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic stereo dataset");
    gen_cmd->add_option("--config", gen.config_path, "Run config JSON")->check(CLI::ExistingFile);
    gen_cmd->add_option("--seed", gen.seed, "Override the data seed");
    gen_cmd->add_option("--out", gen.out, "Dataset directory")->required();

    auto* pre_cmd = app.add_subcommand("pretrain", "Masked-patch pretraining of the frozen backbone");
    add_common(pre_cmd, pre, false, true);

    auto* train_cmd = app.add_subcommand("train", "Train experts, gates and disparity head");
    add_common(train_cmd, tr, true, true);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", eval_data, "Dataset directory")->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--out", eval_out, "Report directory")->capture_default_str();
    eval_cmd->add_option("--mode", eval_mode, "Gating mode")->check(CLI::IsMember({"train", "infer"}))->capture_default_str();
    eval_cmd->add_option("--split", eval_split, "Samples to score")->check(CLI::IsMember({"eval", "all"}))->capture_default_str();

    auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate once per gamma");
    add_common(sweep_cmd, sw, false, true);
    sweep_cmd->add_option("--gamma", sweep_gammas, "Budgets, repeated or comma separated")
        ->required()
        ->delimiter(',');

    auto* insp_cmd = app.add_subcommand("inspect", "Dump expert activation matrix and gating traces");
    insp_cmd->add_option("--checkpoint", insp_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
    insp_cmd->add_option("--data", insp_data, "Dataset directory")->check(CLI::ExistingDirectory);
    insp_cmd->add_option("--out", insp_out, "Output directory")->capture_default_str();
    insp_cmd->add_option("--split", insp_split, "Samples to trace")->check(CLI::IsMember({"eval", "all"}))->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen_cmd) {
            auto cfg = make_config(gen, true);
            smoe_dataset* raw = nullptr;
            check(smoe_dataset_generate(cfg.get(), &raw), "generating data");
            DatasetPtr ds(raw);
            check(smoe_dataset_save(ds.get(), gen.out.c_str()), "writing dataset");
            std::printf("wrote %zu samples to %s\n", smoe_dataset_size(ds.get()), gen.out.c_str());
        } else if (*pre_cmd) {
            auto cfg = make_config(pre);
            if (pre.steps) check(smoe_config_merge_json(cfg.get(), ("{\"pretrain_steps\":" + std::to_string(*pre.steps) + "}").c_str()), "setting pretrain steps");
            auto data = load_data(pre.data_dir);
            smoe_model* raw = nullptr;
            check(smoe_model_create(cfg.get(), &raw), "building model");
            ModelPtr model(raw);
            fs::create_directories(pre.out);
            check(smoe_pretrain(model.get(), data.get(), join(pre.out, "pretrain.csv").c_str()), "pretraining");
            const auto ckpt = fs::absolute(fs::path(pre.out) / "backbone.smoe").string();
            check(smoe_model_save(model.get(), ckpt.c_str()), "saving backbone");
            check(smoe_config_merge_json(cfg.get(), ("{\"backbone_checkpoint\":" + json_string(ckpt) + "}").c_str()), "recording backbone path");
            check(smoe_config_save(cfg.get(), join(pre.out, "config.json").c_str()), "saving config");
            std::printf("backbone written to %s\n", ckpt.c_str());
        } else if (*train_cmd) {
            auto cfg = make_config(tr);
            auto data = load_data(tr.data_dir);
            smoe_model* raw = nullptr;
            check(smoe_model_create(cfg.get(), &raw), "building model");
            ModelPtr model(raw);
            fs::create_directories(tr.out);
            check(smoe_config_save(cfg.get(), join(tr.out, "config.json").c_str()), "saving config");
            check(smoe_train(model.get(), data.get(), join(tr.out, "loss.csv").c_str(), progress, nullptr), "training");
            check(smoe_model_save(model.get(), join(tr.out, "model.smoe").c_str()), "saving checkpoint");
            smoe_metrics m{};
            check(smoe_evaluate(model.get(), data.get(), SMOE_SPLIT_EVAL, SMOE_MODE_INFER, join(tr.out, "eval").c_str(), &m),
                  "evaluating");
            print_metrics(m);
        } else if (*eval_cmd) {
            auto model = load_checkpoint(eval_ckpt);
            auto data = load_data(eval_data);
            smoe_metrics m{};
            check(smoe_evaluate(model.get(), data.get(), parse_split(eval_split),
                                eval_mode == "train" ? SMOE_MODE_TRAIN : SMOE_MODE_INFER, eval_out.c_str(), &m),
                  "evaluating");
            print_metrics(m);
        } else if (*sweep_cmd) {
            auto cfg = make_config(sw);
            auto data = load_data(sw.data_dir);
            std::vector<smoe_sweep_row> rows(sweep_gammas.size());
            check(smoe_sweep(cfg.get(), sweep_gammas.data(), sweep_gammas.size(), data.get(), sw.out.c_str(),
                             rows.data()),
                  "sweeping");
            std::printf("%8s %10s %10s %10s %10s\n", "gamma", "EPE", "kept_lora", "kept_adpt", "activated");
            for (const auto& r : rows)
                std::printf("%8.3f %10.4f %10.4f %10.4f %10.3f\n", r.gamma, r.epe, r.kept_ratio_lora,
                            r.kept_ratio_adapter, r.activated_count);
        } else if (*insp_cmd) {
            auto model = load_checkpoint(insp_ckpt);
            auto data = load_data(insp_data);
            check(smoe_inspect(model.get(), data.get(), parse_split(insp_split), insp_out.c_str()), "inspecting");
            std::printf("wrote %s and %s\n", join(insp_out, "activation.csv").c_str(),
                        join(insp_out, "trace.csv").c_str());
        }
    } catch (const Failure& f) {
        return exit_code(f.status);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "smoe: %s\n", e.what());
        return 1;
    }
    return 0;
}
