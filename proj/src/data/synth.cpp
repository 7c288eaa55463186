// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "data/synth.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "core/errors.hpp"
#include "core/rng.hpp"

namespace smoe::data {

using nlohmann::json;

void SynthParams::validate() const {
    if (height == 0 || width == 0 || channels == 0) throw GenerationError("image shape must be positive");
    if (dot_size == 0) throw GenerationError("dot_size must be positive");
    if (disparity_min > disparity_max) {
        throw GenerationError("disparity range [" + std::to_string(disparity_min) + ", " +
                              std::to_string(disparity_max) + "] is empty");
    }
    if (disparity_max > width / 4 || disparity_max > 255) {
        throw GenerationError("disparity_max " + std::to_string(disparity_max) + " exceeds width/4 = " +
                              std::to_string(width / 4));
    }
}

namespace {

Tensor levels_to_tensor(const std::vector<std::uint8_t>& v, Shape shape, double scale) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]) * scale;
    return Tensor::from(std::move(shape), std::move(out));
}

// Value noise: uniform lattice every `spacing` pixels, bilinear in between.
std::vector<std::uint8_t> value_noise(std::size_t h, std::size_t w, std::size_t spacing, Rng& rng) {
    const std::size_t gh = h / spacing + 2, gw = w / spacing + 2;
    std::vector<double> lattice(gh * gw);
    for (auto& v : lattice) v = rng.uniform();
    std::vector<std::uint8_t> out(h * w);
    const double s = static_cast<double>(spacing);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t ly = y / spacing, lx = x / spacing;
            const double fy = static_cast<double>(y % spacing) / s, fx = static_cast<double>(x % spacing) / s;
            const double top = (1 - fx) * lattice[ly * gw + lx] + fx * lattice[ly * gw + lx + 1];
            const double bot = (1 - fx) * lattice[(ly + 1) * gw + lx] + fx * lattice[(ly + 1) * gw + lx + 1];
            out[y * w + x] = static_cast<std::uint8_t>(std::lround(255.0 * ((1 - fy) * top + fy * bot)));
        }
    return out;
}

struct Layer {
    std::size_t disparity;
    std::size_t y0, y1, x0, x1;  // left-view extent, half-open
    std::vector<std::vector<std::uint8_t>> texture;  // per channel, [H x (W + d_max)]

    bool covers(std::size_t y, std::size_t x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

std::size_t draw_between(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

}  // namespace

Tensor StereoSample::left_image() const { return levels_to_tensor(left, {channels, height, width}, 1.0 / 255.0); }
Tensor StereoSample::right_image() const { return levels_to_tensor(right, {channels, height, width}, 1.0 / 255.0); }
Tensor StereoSample::disparity_map() const { return levels_to_tensor(disparity, {height, width}, 1.0); }
Tensor StereoSample::valid_mask() const { return levels_to_tensor(valid, {height, width}, 1.0); }

std::size_t StereoSample::valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

StereoSample generate_sample(const SynthParams& p, std::uint64_t seed, std::size_t index) {
    p.validate();
    Rng rng(seed ^ (static_cast<std::uint64_t>(index + 1) * 0xD1B54A32D192ED03ULL));
    rng.next_u64();
    const std::size_t h = p.height, w = p.width, tex_w = w + p.disparity_max;

    std::vector<Layer> layers;
    auto add_layer = [&](std::size_t d_lo, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
        Layer l{draw_between(rng, d_lo, p.disparity_max), y0, y1, x0, x1, {}};
        for (std::size_t c = 0; c < p.channels; ++c) l.texture.push_back(value_noise(h, tex_w, p.dot_size, rng));
        layers.push_back(std::move(l));
    };
    // The background extends past the right edge so every right pixel sees a surface.
    add_layer(p.disparity_min, 0, h, 0, tex_w);
    const std::size_t d_bg = layers.front().disparity;
    for (std::size_t r = 0; r < p.num_rects; ++r) {
        const std::size_t rh = draw_between(rng, std::max<std::size_t>(1, h / 4), std::max<std::size_t>(1, h / 2));
        const std::size_t rw = draw_between(rng, std::max<std::size_t>(1, w / 8), std::max<std::size_t>(1, w / 3));
        const std::size_t y0 = draw_between(rng, 0, h - rh), x0 = draw_between(rng, 0, w - rw);
        add_layer(d_bg, y0, y0 + rh, x0, x0 + rw);
    }
    // Painter's order: rectangles by ascending disparity (nearer on top),
    // stable in draw order for ties; the background stays at the bottom.
    std::stable_sort(layers.begin() + 1, layers.end(),
                     [](const Layer& a, const Layer& b) { return a.disparity < b.disparity; });

    // Topmost layer seen at left pixel (y, x), and at right pixel (y, xr),
    // where layer i covers xr iff xr + d_i lies inside its left extent.
    auto top_left = [&](std::size_t y, std::size_t x) {
        std::size_t best = 0;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].covers(y, x)) best = i;
        return best;
    };
    auto top_right = [&](std::size_t y, std::size_t xr) {
        std::size_t best = 0;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].covers(y, xr + layers[i].disparity)) best = i;
        return best;
    };

    StereoSample s;
    s.channels = p.channels;
    s.height = h;
    s.width = w;
    s.left.resize(p.channels * h * w);
    s.right.resize(p.channels * h * w);
    s.disparity.resize(h * w);
    s.valid.resize(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const auto li = top_left(y, x);
            const auto ri = top_right(y, x);
            const auto& L = layers[li];
            const auto& R = layers[ri];
            for (std::size_t c = 0; c < p.channels; ++c) {
                s.left[(c * h + y) * w + x] = L.texture[c][y * tex_w + x];
                s.right[(c * h + y) * w + x] = R.texture[c][y * tex_w + x + R.disparity];
            }
            s.disparity[y * w + x] = static_cast<std::uint8_t>(L.disparity);
            s.valid[y * w + x] = x >= L.disparity && top_right(y, x - L.disparity) == li ? 1 : 0;
        }
    return s;
}

Dataset generate(std::uint64_t seed, std::size_t count, const SynthParams& params) {
    params.validate();
    Dataset d;
    d.params = params;
    d.seed = seed;
    d.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) d.samples.push_back(generate_sample(params, seed, i));
    return d;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    Dataset out;
    out.params = params;
    out.seed = seed;
    for (auto i : indices) {
        if (i >= samples.size()) throw ShapeError("subset: index " + std::to_string(i) + " out of range");
        out.samples.push_back(samples[i]);
    }
    return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split(std::size_t count, double train_fraction,
                                                                    std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(count)));
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> eval(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train.begin(), train.end());
    std::sort(eval.begin(), eval.end());
    return {train, eval};
}

namespace {

std::vector<std::uint8_t> record_bytes(const StereoSample& s) {
    std::vector<std::uint8_t> out;
    out.reserve(2 * s.left.size() + 2 * s.disparity.size());
    for (const auto* part : {&s.left, &s.right, &s.disparity, &s.valid}) out.insert(out.end(), part->begin(), part->end());
    return out;
}

std::uint32_t crc_of(const std::vector<std::uint8_t>& bytes) {
    return static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::string record_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sample_%05zu.bin", i);
    return buf;
}

json params_json(const SynthParams& p) {
    return {{"height", p.height},
            {"width", p.width},
            {"channels", p.channels},
            {"disparity_min", p.disparity_min},
            {"disparity_max", p.disparity_max},
            {"num_rects", p.num_rects},
            {"dot_size", p.dot_size}};
}

}  // namespace

std::uint32_t sample_checksum(const StereoSample& sample) { return crc_of(record_bytes(sample)); }

void save(const Dataset& dataset, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    json index;
    index["format"] = "smoe-stereo-dataset";
    index["version"] = 1;
    index["seed"] = dataset.seed;
    index["count"] = dataset.size();
    index["params"] = params_json(dataset.params);
    index["samples"] = json::array();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto bytes = record_bytes(dataset.samples[i]);
        const auto name = record_name(i);
        std::ofstream f(dir / name, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("failed writing " + (dir / name).string());
        index["samples"].push_back({{"file", name}, {"crc32", crc_of(bytes)}});
    }
    std::ofstream f(dir / "index.json");
    f << index.dump(2) << '\n';
    if (!f) throw IoError("failed writing " + (dir / "index.json").string());
}

Dataset load(const std::filesystem::path& dir) {
    std::ifstream f(dir / "index.json");
    if (!f) throw IoError("cannot open " + (dir / "index.json").string());
    json index;
    try {
        f >> index;
        Dataset d;
        const auto& p = index.at("params");
        d.params.height = p.at("height");
        d.params.width = p.at("width");
        d.params.channels = p.at("channels");
        d.params.disparity_min = p.at("disparity_min");
        d.params.disparity_max = p.at("disparity_max");
        d.params.num_rects = p.at("num_rects");
        d.params.dot_size = p.at("dot_size");
        d.seed = index.at("seed");
        const std::size_t plane = d.params.height * d.params.width;
        const std::size_t image = d.params.channels * plane;
        for (const auto& entry : index.at("samples")) {
            const std::string name = entry.at("file");
            std::ifstream rf(dir / name, std::ios::binary);
            if (!rf) throw IoError("cannot open " + (dir / name).string());
            std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(rf)), std::istreambuf_iterator<char>());
            if (bytes.size() != 2 * image + 2 * plane) throw CorruptCheckpointError(name + ": wrong record size");
            if (crc_of(bytes) != entry.at("crc32").get<std::uint32_t>()) {
                throw CorruptCheckpointError(name + ": checksum mismatch");
            }
            StereoSample s;
            s.channels = d.params.channels;
            s.height = d.params.height;
            s.width = d.params.width;
            auto it = bytes.begin();
            auto take = [&it](std::size_t n) {
                std::vector<std::uint8_t> v(it, it + static_cast<std::ptrdiff_t>(n));
                it += static_cast<std::ptrdiff_t>(n);
                return v;
            };
            s.left = take(image);
            s.right = take(image);
            s.disparity = take(plane);
            s.valid = take(plane);
            d.samples.push_back(std::move(s));
        }
        if (d.samples.size() != index.at("count").get<std::size_t>()) {
            throw CorruptCheckpointError("index count does not match sample list");
        }
        return d;
    } catch (const json::exception& e) {
        throw CorruptCheckpointError("malformed dataset index: " + std::string(e.what()));
    }
}

}  // namespace smoe::data
