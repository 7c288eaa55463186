// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "smoe/smoe.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "core/errors.hpp"
#include "harness/checkpoint.hpp"
#include "harness/config.hpp"
#include "harness/csv.hpp"
#include "harness/evaluate.hpp"
#include "harness/train.hpp"
#include "harness/workflows.hpp"

struct smoe_config {
    smoe::RunConfig value;
};

struct smoe_dataset {
    smoe::data::Dataset value;
};

struct smoe_model {
    smoe::RunConfig config;
    smoe::StereoModel model;
};

namespace {

thread_local std::string g_last_error;

struct StopTraining {};

smoe_status status_of(smoe::ErrorKind kind) {
    switch (kind) {
        case smoe::ErrorKind::Shape: return SMOE_ERR_SHAPE;
        case smoe::ErrorKind::Config: return SMOE_ERR_CONFIG;
        case smoe::ErrorKind::Contract: return SMOE_ERR_CONTRACT;
        case smoe::ErrorKind::Numeric: return SMOE_ERR_NUMERIC;
        case smoe::ErrorKind::Io: return SMOE_ERR_IO;
        case smoe::ErrorKind::Corrupt: return SMOE_ERR_CORRUPT;
        case smoe::ErrorKind::Generation: return SMOE_ERR_GENERATION;
    }
    return SMOE_ERR_INTERNAL;
}

smoe_status fail(smoe_status s, const std::string& message) {
    g_last_error = message;
    return s;
}

template <typename F>
smoe_status guarded(F&& body) {
    try {
        body();
        return SMOE_OK;
    } catch (const smoe::Error& e) {
        return fail(status_of(e.kind()), e.what());
    } catch (const nlohmann::json::exception& e) {
        return fail(SMOE_ERR_CONFIG, std::string("JSON: ") + e.what());
    } catch (const std::bad_alloc&) {
        return fail(SMOE_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(SMOE_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(SMOE_ERR_INTERNAL, "unknown error");
    }
}

#define SMOE_REQUIRE(cond, what) \
    do {                         \
        if (!(cond)) return fail(SMOE_ERR_INVALID_ARGUMENT, what); \
    } while (0)

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

smoe::data::Dataset select(const smoe::RunConfig& config, const smoe_dataset* dataset, smoe_split split) {
    if (split == SMOE_SPLIT_ALL) {
        if (dataset) return dataset->value;
        return smoe::data::generate(config.data_seed, config.dataset_size, config.data);
    }
    auto splits = smoe::make_splits(config, dataset ? &dataset->value : nullptr);
    return split == SMOE_SPLIT_TRAIN ? std::move(splits.train) : std::move(splits.eval);
}

bool valid_split(smoe_split s) { return s == SMOE_SPLIT_ALL || s == SMOE_SPLIT_TRAIN || s == SMOE_SPLIT_EVAL; }

}  // namespace

extern "C" {

const char* smoe_version(void) { return "0.1.0"; }

const char* smoe_last_error(void) { return g_last_error.c_str(); }

const char* smoe_status_name(smoe_status status) {
    switch (status) {
        case SMOE_OK: return "ok";
        case SMOE_ERR_INTERNAL: return "internal error";
        case SMOE_ERR_CONFIG: return "config error";
        case SMOE_ERR_NUMERIC: return "numeric failure";
        case SMOE_ERR_IO: return "I/O error";
        case SMOE_ERR_CORRUPT: return "corrupt checkpoint";
        case SMOE_ERR_SHAPE: return "shape error";
        case SMOE_ERR_CONTRACT: return "contract violation";
        case SMOE_ERR_GENERATION: return "generation error";
        case SMOE_ERR_INVALID_ARGUMENT: return "invalid argument";
    }
    return "unknown status";
}

void smoe_string_free(char* s) { std::free(s); }

smoe_status smoe_config_create(smoe_config** out) {
    SMOE_REQUIRE(out, "out must not be NULL");
    *out = nullptr;
    return guarded([&] { *out = new smoe_config{}; });
}

smoe_status smoe_config_load(const char* path, smoe_config** out) {
    SMOE_REQUIRE(path && out, "path and out must not be NULL");
    *out = nullptr;
    return guarded([&] { *out = new smoe_config{smoe::load_config(path)}; });
}

smoe_status smoe_config_from_json(const char* json, smoe_config** out) {
    SMOE_REQUIRE(json && out, "json and out must not be NULL");
    *out = nullptr;
    return guarded([&] { *out = new smoe_config{smoe::config_from_json(nlohmann::json::parse(json))}; });
}

smoe_status smoe_config_merge_json(smoe_config* config, const char* json) {
    SMOE_REQUIRE(config && json, "config and json must not be NULL");
    return guarded([&] {
        auto patch = nlohmann::json::parse(json);
        if (!patch.is_object()) throw smoe::ConfigError("override must be a JSON object");
        auto merged = smoe::config_to_json(config->value);
        for (const auto& [k, v] : patch.items()) merged[k] = v;
        config->value = smoe::config_from_json(merged);
    });
}

smoe_status smoe_config_to_json(const smoe_config* config, char** out_json) {
    SMOE_REQUIRE(config && out_json, "config and out_json must not be NULL");
    *out_json = nullptr;
    return guarded([&] { *out_json = dup_string(smoe::config_to_json(config->value).dump(2)); });
}

smoe_status smoe_config_save(const smoe_config* config, const char* path) {
    SMOE_REQUIRE(config && path, "config and path must not be NULL");
    return guarded([&] { smoe::save_config(config->value, path); });
}

smoe_status smoe_config_copy(const smoe_config* config, smoe_config** out) {
    SMOE_REQUIRE(config && out, "config and out must not be NULL");
    *out = nullptr;
    return guarded([&] { *out = new smoe_config{config->value}; });
}

void smoe_config_free(smoe_config* config) { delete config; }

smoe_status smoe_dataset_generate(const smoe_config* config, smoe_dataset** out) {
    SMOE_REQUIRE(config && out, "config and out must not be NULL");
    *out = nullptr;
    return guarded([&] {
        const auto& c = config->value;
        *out = new smoe_dataset{smoe::data::generate(c.data_seed, c.dataset_size, c.data)};
    });
}

smoe_status smoe_dataset_load(const char* dir, smoe_dataset** out) {
    SMOE_REQUIRE(dir && out, "dir and out must not be NULL");
    *out = nullptr;
    return guarded([&] { *out = new smoe_dataset{smoe::data::load(dir)}; });
}

smoe_status smoe_dataset_save(const smoe_dataset* dataset, const char* dir) {
    SMOE_REQUIRE(dataset && dir, "dataset and dir must not be NULL");
    return guarded([&] { smoe::data::save(dataset->value, dir); });
}

size_t smoe_dataset_size(const smoe_dataset* dataset) { return dataset ? dataset->value.size() : 0; }

void smoe_dataset_free(smoe_dataset* dataset) { delete dataset; }

smoe_status smoe_model_create(const smoe_config* config, smoe_model** out) {
    SMOE_REQUIRE(config && out, "config and out must not be NULL");
    *out = nullptr;
    return guarded([&] { *out = new smoe_model{config->value, smoe::build_model(config->value)}; });
}

smoe_status smoe_model_load(const char* path, smoe_model** out) {
    SMOE_REQUIRE(path && out, "path and out must not be NULL");
    *out = nullptr;
    return guarded([&] {
        auto loaded = smoe::load_model(path);
        *out = new smoe_model{std::move(loaded.config), std::move(loaded.model)};
    });
}

smoe_status smoe_model_save(const smoe_model* model, const char* path) {
    SMOE_REQUIRE(model && path, "model and path must not be NULL");
    // named_tensors hands out shared handles; saving only reads them.
    return guarded([&] { smoe::save_model(path, const_cast<smoe::StereoModel&>(model->model), model->config); });
}

smoe_status smoe_model_config(const smoe_model* model, smoe_config** out) {
    SMOE_REQUIRE(model && out, "model and out must not be NULL");
    *out = nullptr;
    return guarded([&] { *out = new smoe_config{model->config}; });
}

void smoe_model_free(smoe_model* model) { delete model; }

smoe_status smoe_train(smoe_model* model, const smoe_dataset* dataset, const char* loss_csv,
                       smoe_step_callback callback, void* user) {
    SMOE_REQUIRE(model, "model must not be NULL");
    return guarded([&] {
        auto train = select(model->config, dataset, SMOE_SPLIT_TRAIN);
        smoe::TrainOptions opts;
        std::vector<smoe::StepLog> partial;
        opts.on_step = [&](const smoe::StepLog& s) {
            partial.push_back(s);
            if (!callback) return;
            const smoe_step_log row{s.step, s.disp, s.blc, s.usage, s.total, s.kept_ratio_lora,
                                    s.kept_ratio_adapter, s.lr};
            if (callback(&row, user) == 0) throw StopTraining{};
        };
        try {
            smoe::train_model(model->model, model->config, train, opts);
        } catch (const StopTraining&) {
            smoe::round_to_f32(model->model);
        }
        if (loss_csv) smoe::write_loss_csv(loss_csv, partial);
    });
}

smoe_status smoe_pretrain(smoe_model* model, const smoe_dataset* dataset, const char* log_csv) {
    SMOE_REQUIRE(model, "model must not be NULL");
    return guarded([&] {
        auto train = select(model->config, dataset, SMOE_SPLIT_TRAIN);
        auto log = smoe::pretrain_backbone(model->model, model->config, train);
        if (!log_csv) return;
        smoe::CsvWriter csv(log_csv, {"step", "loss"});
        for (const auto& r : log) {
            csv << r.step << r.loss;
            csv.end_row();
        }
    });
}

smoe_status smoe_evaluate(const smoe_model* model, const smoe_dataset* dataset, smoe_split split, smoe_mode mode,
                          const char* out_dir, smoe_metrics* out) {
    SMOE_REQUIRE(model, "model must not be NULL");
    SMOE_REQUIRE(valid_split(split), "unknown split");
    SMOE_REQUIRE(mode == SMOE_MODE_INFER || mode == SMOE_MODE_TRAIN, "unknown mode");
    return guarded([&] {
        const auto data = select(model->config, dataset, split);
        smoe::EvalOptions opts;
        opts.mode = mode == SMOE_MODE_TRAIN ? smoe::Mode::Train : smoe::Mode::Infer;
        opts.gumbel_temperature = model->config.train.gumbel_tau_end;
        opts.noise_seed = model->config.noise_seed;
        const auto r = smoe::evaluate(model->model, data, opts);
        if (out_dir) smoe::write_report(r, out_dir);
        if (out) {
            *out = smoe_metrics{r.samples,         r.valid_pixels,       r.epe,        r.bad1,
                                r.bad2,            r.bad3,               r.kept_ratio_lora,
                                r.kept_ratio_adapter, r.kept_ratio,      r.activated_count,
                                r.macs_per_view};
        }
    });
}

smoe_status smoe_inspect(const smoe_model* model, const smoe_dataset* dataset, smoe_split split,
                         const char* out_dir) {
    SMOE_REQUIRE(model && out_dir, "model and out_dir must not be NULL");
    SMOE_REQUIRE(valid_split(split), "unknown split");
    return guarded([&] {
        const auto data = select(model->config, dataset, split);
        std::vector<smoe::TraceRow> rows;
        smoe::EvalOptions opts;
        opts.traces = &rows;
        const auto r = smoe::evaluate(model->model, data, opts);
        const std::filesystem::path dir(out_dir);
        smoe::write_activation_csv(r, dir / "activation.csv");
        smoe::write_trace_csv(rows, dir / "trace.csv");
    });
}

smoe_status smoe_sweep(const smoe_config* config, const double* gammas, size_t count, const smoe_dataset* dataset,
                       const char* out_dir, smoe_sweep_row* rows) {
    SMOE_REQUIRE(config && (gammas || count == 0), "config and gammas must not be NULL");
    return guarded([&] {
        smoe::SweepOptions opts;
        opts.source = dataset ? &dataset->value : nullptr;
        if (out_dir) opts.out_dir = out_dir;
        const auto result = smoe::sweep_gamma(config->value, std::vector<double>(gammas, gammas + count), opts);
        if (out_dir) smoe::write_sweep_csv(result, std::filesystem::path(out_dir) / "sweep.csv");
        if (rows) {
            for (std::size_t i = 0; i < result.size(); ++i) {
                const auto& r = result[i];
                rows[i] = smoe_sweep_row{r.gamma, r.epe, r.kept_ratio_lora, r.kept_ratio_adapter, r.activated_count};
            }
        }
    });
}

}  // extern "C"
