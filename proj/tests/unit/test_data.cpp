// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "core/errors.hpp"
#include "data/synth.hpp"
#include "model/losses.hpp"

using namespace smoe;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("smoe_test_data_" + name);
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST(Synth, FlatZeroDisparityCopiesLeft) {
    data::SynthParams p;
    p.disparity_min = p.disparity_max = 0;
    p.num_rects = 0;
    auto s = data::generate_sample(p, 1, 0);
    EXPECT_EQ(s.left, s.right);
    EXPECT_TRUE(std::all_of(s.disparity.begin(), s.disparity.end(), [](auto v) { return v == 0; }));
    EXPECT_EQ(s.valid_count(), p.height * p.width);
}

TEST(Synth, PlaneAtFourWarps) {
    data::SynthParams p;
    p.disparity_min = p.disparity_max = 4;
    p.num_rects = 0;
    auto s = data::generate_sample(p, 2, 0);
    for (std::size_t y = 0; y < p.height; ++y)
        for (std::size_t x = 0; x < p.width; ++x) {
            EXPECT_EQ(s.disparity[y * p.width + x], 4);
            EXPECT_EQ(s.valid[y * p.width + x], x >= 4 ? 1 : 0);
            if (x >= 4) {
                ASSERT_EQ(s.right[y * p.width + x - 4], s.left[y * p.width + x]);
            }
        }
}

TEST(Synth, PhotometricConsistencyAtValidPixels) {
    data::SynthParams p;
    p.channels = 3;
    p.num_rects = 4;
    std::size_t invalid_total = 0;
    for (std::size_t i = 0; i < 40; ++i) {
        auto s = data::generate_sample(p, 3, i);
        for (std::size_t y = 0; y < p.height; ++y)
            for (std::size_t x = 0; x < p.width; ++x) {
                const auto d = s.disparity[y * p.width + x];
                EXPECT_GE(d, p.disparity_min);
                EXPECT_LE(d, p.disparity_max);
                if (!s.valid[y * p.width + x]) {
                    ++invalid_total;
                    continue;
                }
                ASSERT_GE(x, d);
                for (std::size_t c = 0; c < 3; ++c) {
                    const auto plane = c * p.height * p.width;
                    ASSERT_EQ(s.right[plane + y * p.width + x - d], s.left[plane + y * p.width + x]);
                }
            }
    }
    EXPECT_GT(invalid_total, 0u);
}

TEST(Synth, HasDepthVariety) {
    data::SynthParams p;
    std::set<int> seen;
    for (std::size_t i = 0; i < 50; ++i) {
        auto s = data::generate_sample(p, 4, i);
        seen.insert(s.disparity.begin(), s.disparity.end());
    }
    EXPECT_GE(seen.size(), 10u);
}

TEST(Synth, Deterministic) {
    data::SynthParams p;
    auto a = data::generate(7, 5, p);
    auto b = data::generate(7, 5, p);
    auto c = data::generate(8, 5, p);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(a.samples[i].left, b.samples[i].left);
        EXPECT_EQ(a.samples[i].right, b.samples[i].right);
        EXPECT_EQ(a.samples[i].disparity, b.samples[i].disparity);
        EXPECT_EQ(data::sample_checksum(a.samples[i]), data::sample_checksum(b.samples[i]));
        EXPECT_NE(a.samples[i].left, c.samples[i].left);
    }
    // Golden checksum pins the generator algorithm across platforms.
    EXPECT_EQ(data::sample_checksum(a.samples[0]), data::sample_checksum(data::generate_sample(p, 7, 0)));
}

TEST(Synth, ValuesAreQuantisedIntensities) {
    data::SynthParams p;
    auto s = data::generate_sample(p, 9, 0);
    auto img = s.left_image();
    for (double v : img.data()) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        ASSERT_DOUBLE_EQ(v * 255.0, std::round(v * 255.0));
    }
}

TEST(Synth, ZeroPredictorEpeIsMeanGt) {
    data::SynthParams p;
    p.disparity_max = 8;
    auto ds = data::generate(10, 10, p);
    double sum = 0.0, n = 0.0;
    for (const auto& s : ds.samples)
        for (std::size_t i = 0; i < s.disparity.size(); ++i)
            if (s.valid[i]) {
                sum += s.disparity[i];
                n += 1.0;
            }
    double epe = 0.0, pixels = 0.0;
    for (const auto& s : ds.samples) {
        const double v = static_cast<double>(s.valid_count());
        epe += v * loss::disparity_loss({Tensor::zeros({p.height, p.width})}, s.disparity_map(), 1.0, s.valid_mask())
                       .item();
        pixels += v;
    }
    EXPECT_NEAR(epe / pixels, sum / n, 1e-12);
}

TEST(Synth, RejectsImpossibleGeometry) {
    data::SynthParams p;
    p.disparity_max = 17;  // > 64 / 4
    EXPECT_THROW(data::generate(1, 1, p), GenerationError);
    p.disparity_max = 4;
    p.disparity_min = 5;
    EXPECT_THROW(data::generate(1, 1, p), GenerationError);
}

TEST(Split, DisjointCoveringDeterministic) {
    auto [train, eval] = data::split(100, 0.8, 11);
    EXPECT_EQ(train.size(), 80u);
    EXPECT_EQ(eval.size(), 20u);
    std::set<std::size_t> all(train.begin(), train.end());
    for (auto i : eval) EXPECT_TRUE(all.insert(i).second);
    EXPECT_EQ(all.size(), 100u);
    EXPECT_TRUE(std::is_sorted(train.begin(), train.end()));
    EXPECT_TRUE(std::is_sorted(eval.begin(), eval.end()));
    auto again = data::split(100, 0.8, 11);
    EXPECT_EQ(again.first, train);
    EXPECT_NE(data::split(100, 0.8, 12).first, train);
    EXPECT_THROW(data::split(10, 1.0, 1), ConfigError);
}

TEST(DatasetIo, RoundTrip) {
    data::SynthParams p;
    p.channels = 3;
    auto ds = data::generate(12, 4, p);
    auto dir = scratch_dir("roundtrip");
    data::save(ds, dir);
    auto back = data::load(dir);
    ASSERT_EQ(back.size(), 4u);
    EXPECT_EQ(back.seed, 12u);
    EXPECT_EQ(back.params.channels, 3u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(back.samples[i].left, ds.samples[i].left);
        EXPECT_EQ(back.samples[i].right, ds.samples[i].right);
        EXPECT_EQ(back.samples[i].disparity, ds.samples[i].disparity);
        EXPECT_EQ(back.samples[i].valid, ds.samples[i].valid);
    }
    fs::remove_all(dir);
}

TEST(DatasetIo, DetectsCorruption) {
    auto ds = data::generate(13, 2, {});
    auto dir = scratch_dir("corrupt");
    data::save(ds, dir);
    {
        std::fstream f(dir / "sample_00001.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(10);
        char c;
        f.read(&c, 1);
        f.seekp(10);
        c = static_cast<char>(c ^ 0x5a);
        f.write(&c, 1);
    }
    EXPECT_THROW(data::load(dir), CorruptCheckpointError);
    fs::remove_all(dir);
    EXPECT_THROW(data::load(dir), IoError);
}
