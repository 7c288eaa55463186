// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

// Exercises the shared library through its public header only.

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "smoe/smoe.h"

namespace fs = std::filesystem;

namespace {

const char* kTiny = R"({
  "image_height": 16, "image_width": 32, "layers": 2, "dim": 16, "heads": 2, "mlp_hidden": 32,
  "lora_ranks": [2, 4], "adapter_kernels": [3, 5], "adapter_bottleneck": 4, "gate_hidden": 8,
  "feature_channels": 8, "d_max": 3, "iterations": 2, "update_hidden": 8, "disparity_max": 6,
  "dataset_size": 24, "steps": 6, "batch": 2, "pretrain_steps": 4
})";

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("smoe_capi_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct Handles {
    smoe_config* config = nullptr;
    smoe_dataset* data = nullptr;
    smoe_model* model = nullptr;
    ~Handles() {
        smoe_model_free(model);
        smoe_dataset_free(data);
        smoe_config_free(config);
    }
};

void tiny(Handles& h) {
    ASSERT_EQ(smoe_config_create(&h.config), SMOE_OK);
    ASSERT_EQ(smoe_config_merge_json(h.config, kTiny), SMOE_OK) << smoe_last_error();
    ASSERT_EQ(smoe_dataset_generate(h.config, &h.data), SMOE_OK) << smoe_last_error();
    ASSERT_EQ(smoe_model_create(h.config, &h.model), SMOE_OK) << smoe_last_error();
}

std::string read_all(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST(CApi, StatusNamesAndVersion) {
    EXPECT_STREQ(smoe_version(), "0.1.0");
    for (int s = SMOE_OK; s <= SMOE_ERR_INVALID_ARGUMENT; ++s) {
        EXPECT_STRNE(smoe_status_name(static_cast<smoe_status>(s)), "unknown status");
    }
    EXPECT_STREQ(smoe_status_name(static_cast<smoe_status>(99)), "unknown status");
}

TEST(CApi, NullArgumentsAreRejected) {
    EXPECT_EQ(smoe_config_create(nullptr), SMOE_ERR_INVALID_ARGUMENT);
    EXPECT_NE(std::strlen(smoe_last_error()), 0u);
    smoe_config* c = nullptr;
    EXPECT_EQ(smoe_config_load(nullptr, &c), SMOE_ERR_INVALID_ARGUMENT);
    EXPECT_EQ(c, nullptr);
    EXPECT_EQ(smoe_model_create(nullptr, nullptr), SMOE_ERR_INVALID_ARGUMENT);
    EXPECT_EQ(smoe_train(nullptr, nullptr, nullptr, nullptr, nullptr), SMOE_ERR_INVALID_ARGUMENT);
    EXPECT_EQ(smoe_evaluate(nullptr, nullptr, SMOE_SPLIT_EVAL, SMOE_MODE_INFER, nullptr, nullptr),
              SMOE_ERR_INVALID_ARGUMENT);
    EXPECT_EQ(smoe_dataset_size(nullptr), 0u);
    smoe_config_free(nullptr);
    smoe_model_free(nullptr);
    smoe_dataset_free(nullptr);
    smoe_string_free(nullptr);
}

TEST(CApi, ConfigErrorsMapToConfigStatus) {
    smoe_config* c = nullptr;
    EXPECT_EQ(smoe_config_from_json("{\"gamma\": 1.7}", &c), SMOE_ERR_CONFIG);
    EXPECT_EQ(c, nullptr);
    EXPECT_EQ(smoe_config_from_json("{\"no_such_key\": 1}", &c), SMOE_ERR_CONFIG);
    EXPECT_NE(std::string(smoe_last_error()).find("no_such_key"), std::string::npos);
    EXPECT_EQ(smoe_config_from_json("not json", &c), SMOE_ERR_CONFIG);
    EXPECT_EQ(smoe_config_load("/nonexistent/config.json", &c), SMOE_ERR_CONFIG);
}

TEST(CApi, MergeIsAtomicAndRoundTrips) {
    smoe_config* c = nullptr;
    ASSERT_EQ(smoe_config_create(&c), SMOE_OK);
    ASSERT_EQ(smoe_config_merge_json(c, "{\"gamma\": 0.3, \"steps\": 11}"), SMOE_OK);
    char* before = nullptr;
    ASSERT_EQ(smoe_config_to_json(c, &before), SMOE_OK);
    EXPECT_EQ(smoe_config_merge_json(c, "{\"steps\": 5, \"gamma\": -1}"), SMOE_ERR_CONFIG);
    EXPECT_EQ(smoe_config_merge_json(c, "[1, 2]"), SMOE_ERR_CONFIG);
    char* after = nullptr;
    ASSERT_EQ(smoe_config_to_json(c, &after), SMOE_OK);
    EXPECT_STREQ(before, after);

    smoe_config* back = nullptr;
    ASSERT_EQ(smoe_config_from_json(after, &back), SMOE_OK);
    char* again = nullptr;
    ASSERT_EQ(smoe_config_to_json(back, &again), SMOE_OK);
    EXPECT_STREQ(after, again);

    const auto path = scratch("config") / "c.json";
    ASSERT_EQ(smoe_config_save(c, path.c_str()), SMOE_OK);
    smoe_config* loaded = nullptr;
    ASSERT_EQ(smoe_config_load(path.c_str(), &loaded), SMOE_OK);
    char* from_file = nullptr;
    ASSERT_EQ(smoe_config_to_json(loaded, &from_file), SMOE_OK);
    EXPECT_STREQ(after, from_file);

    for (char* s : {before, after, again, from_file}) smoe_string_free(s);
    for (smoe_config* x : {c, back, loaded}) smoe_config_free(x);
}

TEST(CApi, TrainEvaluateSaveLoad) {
    Handles h;
    tiny(h);
    ASSERT_FALSE(HasFatalFailure());
    EXPECT_EQ(smoe_dataset_size(h.data), 24u);
    const auto dir = scratch("train");
    const auto csv = dir / "loss.csv";
    ASSERT_EQ(smoe_train(h.model, h.data, csv.c_str(), nullptr, nullptr), SMOE_OK) << smoe_last_error();
    EXPECT_EQ(read_all(csv).rfind("step,disp,blc,usage,total,kept_ratio_lora,kept_ratio_adapter\n", 0), 0u);

    smoe_metrics m{};
    ASSERT_EQ(smoe_evaluate(h.model, h.data, SMOE_SPLIT_EVAL, SMOE_MODE_INFER, (dir / "eval").c_str(), &m), SMOE_OK);
    EXPECT_GT(m.samples, 0u);
    EXPECT_LT(m.samples, 24u);
    EXPECT_GT(m.valid_pixels, 0u);
    EXPECT_TRUE(m.epe >= 0.0);
    EXPECT_GE(m.bad1, m.bad2);
    EXPECT_GE(m.bad2, m.bad3);
    EXPECT_GT(m.macs_per_view, 0u);
    EXPECT_TRUE(fs::exists(dir / "eval" / "metrics.json"));
    EXPECT_TRUE(fs::exists(dir / "eval" / "activation.csv"));

    const auto ckpt = dir / "model.smoe";
    ASSERT_EQ(smoe_model_save(h.model, ckpt.c_str()), SMOE_OK);
    smoe_model* loaded = nullptr;
    ASSERT_EQ(smoe_model_load(ckpt.c_str(), &loaded), SMOE_OK) << smoe_last_error();
    smoe_metrics again{};
    ASSERT_EQ(smoe_evaluate(loaded, h.data, SMOE_SPLIT_EVAL, SMOE_MODE_INFER, nullptr, &again), SMOE_OK);
    EXPECT_EQ(std::memcmp(&m, &again, sizeof m), 0);

    const auto ckpt2 = dir / "model2.smoe";
    ASSERT_EQ(smoe_model_save(loaded, ckpt2.c_str()), SMOE_OK);
    EXPECT_EQ(read_all(ckpt), read_all(ckpt2));

    smoe_config* cfg = nullptr;
    ASSERT_EQ(smoe_model_config(loaded, &cfg), SMOE_OK);
    char* a = nullptr;
    char* b = nullptr;
    ASSERT_EQ(smoe_config_to_json(cfg, &a), SMOE_OK);
    ASSERT_EQ(smoe_config_to_json(h.config, &b), SMOE_OK);
    EXPECT_STREQ(a, b);
    smoe_string_free(a);
    smoe_string_free(b);
    smoe_config_free(cfg);
    smoe_model_free(loaded);

    ASSERT_EQ(smoe_inspect(h.model, h.data, SMOE_SPLIT_EVAL, dir.c_str()), SMOE_OK);
    EXPECT_TRUE(fs::exists(dir / "trace.csv"));
}

TEST(CApi, CorruptCheckpointReportsCorrupt) {
    Handles h;
    tiny(h);
    ASSERT_FALSE(HasFatalFailure());
    const auto dir = scratch("corrupt");
    const auto ckpt = dir / "model.smoe";
    ASSERT_EQ(smoe_model_save(h.model, ckpt.c_str()), SMOE_OK);
    auto bytes = read_all(ckpt);
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream(dir / "bad.smoe", std::ios::binary) << bytes;
    std::ofstream(dir / "junk.smoe", std::ios::binary) << "hello";

    smoe_model* m = nullptr;
    EXPECT_EQ(smoe_model_load((dir / "bad.smoe").c_str(), &m), SMOE_ERR_CORRUPT);
    EXPECT_EQ(m, nullptr);
    EXPECT_EQ(smoe_model_load((dir / "junk.smoe").c_str(), &m), SMOE_ERR_CORRUPT);
    EXPECT_EQ(smoe_model_load((dir / "missing.smoe").c_str(), &m), SMOE_ERR_IO);
}

TEST(CApi, CallbackStopsTrainingEarly) {
    Handles h;
    tiny(h);
    ASSERT_FALSE(HasFatalFailure());
    struct Seen {
        std::vector<smoe_step_log> steps;
    } seen;
    auto cb = [](const smoe_step_log* log, void* user) -> int {
        auto* s = static_cast<Seen*>(user);
        s->steps.push_back(*log);
        return log->step < 2 ? 1 : 0;
    };
    const auto csv = scratch("callback") / "loss.csv";
    ASSERT_EQ(smoe_train(h.model, h.data, csv.c_str(), cb, &seen), SMOE_OK) << smoe_last_error();
    ASSERT_EQ(seen.steps.size(), 3u);
    for (std::size_t i = 0; i < seen.steps.size(); ++i) {
        EXPECT_EQ(seen.steps[i].step, i);
        EXPECT_GT(seen.steps[i].learning_rate, 0.0);
        EXPECT_GE(seen.steps[i].kept_ratio_lora, 0.0);
        EXPECT_LE(seen.steps[i].kept_ratio_lora, 1.0);
    }
    // Header plus the three completed steps.
    const auto text = read_all(csv);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(CApi, SweepValidatesAndSorts) {
    Handles h;
    tiny(h);
    ASSERT_FALSE(HasFatalFailure());
    smoe_sweep_row rows[2];
    const double one[] = {0.5};
    EXPECT_EQ(smoe_sweep(h.config, one, 1, h.data, nullptr, rows), SMOE_ERR_CONFIG);
    const double two[] = {0.8, 0.2};
    const auto dir = scratch("sweep");
    ASSERT_EQ(smoe_sweep(h.config, two, 2, h.data, dir.c_str(), rows), SMOE_OK) << smoe_last_error();
    EXPECT_EQ(rows[0].gamma, 0.2);
    EXPECT_EQ(rows[1].gamma, 0.8);
    EXPECT_EQ(read_all(dir / "sweep.csv").substr(0, 6), "gamma,");
}
