// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "model/stereo.hpp"

#include <cmath>

#include "core/errors.hpp"
#include "core/ops.hpp"
#include "model/init.hpp"
#include "model/stereo_ops.hpp"

namespace smoe {

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

constexpr double kPositionScale = 0.2;

}  // namespace

void StereoConfig::validate() const {
    if (patch == 0) throw ConfigError("patch must be positive");
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
    if (image_height == 0 || image_width == 0) throw ConfigError("image size must be positive");
    if (layers == 0) throw ConfigError("layers must be positive");
    if (block.dim == 0 || block.dim % 4 != 0) throw ConfigError("dim must be a positive multiple of 4");
    if (feature_channels == 0) throw ConfigError("feature_channels must be positive");
    if (iterations == 0) throw ConfigError("iterations must be >= 1");
    if (update_hidden == 0) throw ConfigError("update_hidden must be positive");
    const auto wf = padded_width() / patch;
    if (d_max == 0 || d_max >= wf) {
        throw ConfigError("d_max " + std::to_string(d_max) + " must lie in [1, " + std::to_string(wf) +
                          ") for feature width " + std::to_string(wf));
    }
    if (padded_height() > 2 * image_height || padded_width() > 2 * image_width) {
        throw ConfigError("patch too large for reflect padding of the image");
    }
}

std::size_t StereoConfig::padded_height() const { return round_up(image_height, patch); }
std::size_t StereoConfig::padded_width() const { return round_up(image_width, patch); }

StereoModel make_stereo_model(const StereoConfig& config, std::uint64_t seed) {
    config.validate();
    Rng root(seed);
    Rng frozen = root.fork(1), trainable = root.fork(2);
    StereoModel m;
    m.config = config;
    const std::size_t d = config.block.dim, in = config.channels * config.patch * config.patch;

    auto& bb = m.backbone;
    bb.patch_weight = init::orthogonal(d, in, frozen, std::sqrt(static_cast<double>(d) / static_cast<double>(in)));
    bb.patch_bias = Tensor::zeros({d});
    bb.cls_token = init::normal({1, d}, 1.0, frozen);
    bb.norm_gamma = Tensor::full({d}, 1.0);
    bb.norm_beta = Tensor::zeros({d});
    for (std::size_t l = 0; l < config.layers; ++l) bb.blocks.push_back(make_block(config.block, l, frozen, trainable));

    auto& h = m.head;
    const std::size_t cf = config.feature_channels, taps = 2 * config.lookup_radius + 1;
    h.compress_w = init::kaiming_uniform({cf, d, 1, 1}, d, trainable);
    h.compress_b = Tensor::zeros({cf}, true);
    for (std::size_t i = 0; i < 2; ++i) {
        h.res_w[i] = init::kaiming_uniform({cf, cf, 3, 3}, cf * 9, trainable);
        for (auto& v : h.res_w[i].mutable_data()) v *= 0.5;
        h.res_b[i] = Tensor::zeros({cf}, true);
    }
    h.update1_w = init::kaiming_uniform({config.update_hidden, taps + 1, 3, 3}, (taps + 1) * 9, trainable);
    h.update1_b = Tensor::zeros({config.update_hidden}, true);
    h.update2_w = Tensor::zeros({1, config.update_hidden, 3, 3}, true);
    h.update2_b = Tensor::zeros({1}, true);
    return m;
}

std::vector<std::pair<std::string, Tensor>> named_tensors(StereoModel& model) {
    std::vector<std::pair<std::string, Tensor>> out;
    auto& bb = model.backbone;
    out.emplace_back("backbone.patch.weight", bb.patch_weight);
    out.emplace_back("backbone.patch.bias", bb.patch_bias);
    out.emplace_back("backbone.cls", bb.cls_token);
    out.emplace_back("backbone.norm.gamma", bb.norm_gamma);
    out.emplace_back("backbone.norm.beta", bb.norm_beta);
    for (auto& b : bb.blocks) collect_block_tensors(b, "backbone.blocks." + std::to_string(b.index) + ".", out);
    auto& h = model.head;
    out.emplace_back("head.compress.weight", h.compress_w);
    out.emplace_back("head.compress.bias", h.compress_b);
    for (std::size_t i = 0; i < 2; ++i) {
        out.emplace_back("head.res" + std::to_string(i) + ".weight", h.res_w[i]);
        out.emplace_back("head.res" + std::to_string(i) + ".bias", h.res_b[i]);
    }
    out.emplace_back("head.update1.weight", h.update1_w);
    out.emplace_back("head.update1.bias", h.update1_b);
    out.emplace_back("head.update2.weight", h.update2_w);
    out.emplace_back("head.update2.bias", h.update2_b);
    return out;
}

std::vector<Tensor> trainable_tensors(StereoModel& model) {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_tensors(model))
        if (t.requires_grad()) out.push_back(t);
    return out;
}

Tensor patchify(const Tensor& image, std::size_t patch, std::size_t padded_h, std::size_t padded_w) {
    if (image.rank() != 3) throw ShapeError("patchify: image must be [C x H x W], got " + shape_str(image.shape()));
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (padded_h % patch != 0 || padded_w % patch != 0 || padded_h < h || padded_w < w) {
        throw ShapeError("patchify: padded size does not fit the patch grid");
    }
    // Reflection without repeating the edge pixel: index -1 -> 1, h -> h - 2.
    auto reflect = [](std::size_t i, std::size_t n) { return i < n ? i : (n >= 2 ? 2 * n - 2 - i : 0); };
    const std::size_t gh = padded_h / patch, gw = padded_w / patch, row = c * patch * patch;
    const auto src = image.data();
    std::vector<double> out(gh * gw * row);
    for (std::size_t ty = 0; ty < gh; ++ty)
        for (std::size_t tx = 0; tx < gw; ++tx)
            for (std::size_t k = 0; k < c; ++k)
                for (std::size_t py = 0; py < patch; ++py)
                    for (std::size_t px = 0; px < patch; ++px) {
                        const std::size_t y = reflect(ty * patch + py, h), x = reflect(tx * patch + px, w);
                        out[(ty * gw + tx) * row + (k * patch + py) * patch + px] = src[(k * h + y) * w + x];
                    }
    return Tensor::from({gh * gw, row}, std::move(out));
}

Tensor positional_embedding(TokenGrid grid, std::size_t dim) {
    const std::size_t half = dim / 2, quarter = half / 2;
    std::vector<double> out(grid.cells() * dim, 0.0);
    for (std::size_t y = 0; y < grid.height; ++y)
        for (std::size_t x = 0; x < grid.width; ++x) {
            double* row = out.data() + (y * grid.width + x) * dim;
            for (std::size_t i = 0; i < quarter; ++i) {
                const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
                row[i] = std::sin(static_cast<double>(y) * freq);
                row[quarter + i] = std::cos(static_cast<double>(y) * freq);
                row[half + i] = std::sin(static_cast<double>(x) * freq);
                row[half + quarter + i] = std::cos(static_cast<double>(x) * freq);
            }
        }
    for (auto& v : out) v *= kPositionScale;
    return Tensor::from({grid.cells(), dim}, std::move(out));
}

Tensor encode_tokens(const StereoModel& model, const Tensor& image, const ForwardOptions& opts, GatingTrace& trace) {
    const auto& cfg = model.config;
    const auto& bb = model.backbone;
    if (image.rank() != 3 || image.dim(0) != cfg.channels || image.dim(1) != cfg.image_height ||
        image.dim(2) != cfg.image_width) {
        throw ShapeError("encode_tokens: image " + shape_str(image.shape()) + " does not match configured [" +
                         std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_height) + "x" +
                         std::to_string(cfg.image_width) + "]");
    }
    const auto grid = cfg.grid();
    auto patches = patchify(image, cfg.patch, cfg.padded_height(), cfg.padded_width());
    auto tokens = ops::add(ops::linear(patches, bb.patch_weight, bb.patch_bias),
                           positional_embedding(grid, cfg.block.dim));
    auto x = ops::concat_rows({bb.cls_token, tokens});

    BlockContext ctx;
    ctx.mode = opts.mode;
    ctx.grid = grid;
    ctx.gumbel_temperature = opts.gumbel_temperature;
    ctx.noise = opts.noise;
    ctx.experts_enabled = opts.experts_enabled;
    for (std::size_t l = 0; l < bb.blocks.size(); ++l) {
        ctx.force_lora_mask = l < opts.force_lora.size() ? opts.force_lora[l] : std::nullopt;
        ctx.force_adapter_mask = l < opts.force_adapter.size() ? opts.force_adapter[l] : std::nullopt;
        x = block_forward(bb.blocks[l], x, ctx, trace);
    }
    return ops::layer_norm(x, bb.norm_gamma, bb.norm_beta);
}

ViewFeatures extract_view(const StereoModel& model, const Tensor& image, const ForwardOptions& opts) {
    const auto& cfg = model.config;
    const auto& h = model.head;
    const auto grid = cfg.grid();
    ViewFeatures out;
    auto tokens = encode_tokens(model, image, opts, out.trace);
    auto spatial = ops::slice_rows(tokens, 1, grid.cells());
    auto fmap = ops::reshape(ops::transpose(spatial), {cfg.block.dim, grid.height, grid.width});
    auto z = stereo::add_channel_bias(ops::conv2d(fmap, h.compress_w, 0), h.compress_b);
    for (std::size_t i = 0; i < 2; ++i) {
        z = ops::add(z, stereo::add_channel_bias(ops::conv2d(ops::relu(z), h.res_w[i], 1), h.res_b[i]));
    }
    out.features = z;
    return out;
}

std::vector<Tensor> refine_disparity(const DisparityHead& head, const StereoConfig& config, const Tensor& volume) {
    const std::size_t hf = volume.dim(0), wf = volume.dim(1), taps = 2 * config.lookup_radius + 1;
    const double top = static_cast<double>(volume.dim(2) - 1);
    auto prob = ops::softmax(volume, 1.0);
    std::vector<Tensor> seq{stereo::expected_index(prob)};
    for (std::size_t i = 1; i < config.iterations; ++i) {
        const auto& d = seq.back();
        auto window = ops::reshape(stereo::lookup(prob, d, config.lookup_radius), {taps, hf * wf});
        auto level = ops::reshape(ops::scale(d, 1.0 / static_cast<double>(volume.dim(2))), {1, hf * wf});
        auto inp = ops::reshape(ops::concat_rows({window, level}), {taps + 1, hf, wf});
        auto hidden = ops::relu(stereo::add_channel_bias(ops::conv2d(inp, head.update1_w, 1), head.update1_b));
        auto delta = stereo::add_channel_bias(ops::conv2d(hidden, head.update2_w, 1), head.update2_b);
        seq.push_back(ops::clamp(ops::add(d, ops::reshape(delta, {hf, wf})), 0.0, top));
    }
    return seq;
}

namespace {

// Top-left [h x w] window of a 2-D map.
Tensor crop(const Tensor& x, std::size_t h, std::size_t w) {
    Tensor out = x;
    if (x.dim(0) != h) out = ops::slice_rows(out, 0, h);
    if (x.dim(1) != w) out = ops::transpose(ops::slice_rows(ops::transpose(out), 0, w));
    return out;
}

}  // namespace

StereoOutput stereo_forward(const StereoModel& model, const Tensor& left, const Tensor& right,
                            const ForwardOptions& opts) {
    if (left.shape() != right.shape()) {
        throw ShapeError("stereo_forward: views " + shape_str(left.shape()) + " and " + shape_str(right.shape()) +
                         " differ");
    }
    const auto& cfg = model.config;
    auto lf = extract_view(model, left, opts);
    auto rf = extract_view(model, right, opts);
    StereoOutput out;
    out.volume = stereo::correlation(lf.features, rf.features, cfg.d_max);
    out.coarse = refine_disparity(model.head, cfg, out.volume);
    for (const auto& d : out.coarse) {
        auto up = ops::scale(stereo::upsample_bilinear(d, cfg.padded_height(), cfg.padded_width()),
                             static_cast<double>(cfg.patch));
        out.disparities.push_back(crop(up, cfg.image_height, cfg.image_width));
    }
    out.left_trace = std::move(lf.trace);
    out.right_trace = std::move(rf.trace);
    return out;
}

}  // namespace smoe
