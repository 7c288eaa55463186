// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "harness/workflows.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "core/errors.hpp"
#include "core/ops.hpp"
#include "harness/checkpoint.hpp"
#include "harness/csv.hpp"
#include "harness/optimizer.hpp"
#include "model/init.hpp"

namespace smoe {

std::vector<SweepRow> sweep_gamma(const RunConfig& base, std::vector<double> gammas, const SweepOptions& options) {
    if (gammas.size() < 2) throw ConfigError("a gamma sweep needs at least two values");
    std::sort(gammas.begin(), gammas.end());
    if (std::adjacent_find(gammas.begin(), gammas.end()) != gammas.end()) {
        throw ConfigError("gamma values must be distinct");
    }
    const auto splits = make_splits(base, options.source);
    std::vector<SweepRow> rows;
    for (double g : gammas) {
        RunConfig cfg = base;
        cfg.loss.gamma = g;
        cfg.validate();
        auto model = build_model(cfg);
        TrainOptions to;
        if (options.on_step) to.on_step = [&](const StepLog& s) { options.on_step(g, s); };
        auto log = train_model(model, cfg, splits.train, to);
        auto report = evaluate(model, splits.eval);
        if (!options.out_dir.empty()) {
            const auto dir = options.out_dir / ("gamma_" + format_double(g));
            save_model(dir / "model.smoe", model, cfg);
            write_loss_csv(dir / "loss.csv", log);
            write_report(report, dir);
        }
        rows.push_back({g, report.epe, report.kept_ratio_lora, report.kept_ratio_adapter, report.activated_count});
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
    CsvWriter csv(path, {"gamma", "epe", "kept_ratio_lora", "kept_ratio_adapter", "activated_count"});
    for (const auto& r : rows) {
        csv << r.gamma << r.epe << r.kept_ratio_lora << r.kept_ratio_adapter << r.activated_count;
        csv.end_row();
    }
}

namespace {

// Zeroes the pixels of the chosen grid cells (clipped to the image).
Tensor blank_cells(const Tensor& image, const std::vector<std::size_t>& cells, std::size_t patch,
                   std::size_t grid_w) {
    std::vector<double> v(image.data().begin(), image.data().end());
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    for (auto cell : cells) {
        const std::size_t y0 = (cell / grid_w) * patch, x0 = (cell % grid_w) * patch;
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = y0; y < std::min(h, y0 + patch); ++y)
                for (std::size_t x = x0; x < std::min(w, x0 + patch); ++x) v[(ch * h + y) * w + x] = 0.0;
    }
    return Tensor::from(image.shape(), std::move(v));
}

}  // namespace

std::vector<PretrainLog> pretrain_backbone(StereoModel& model, const RunConfig& config,
                                           const data::Dataset& images) {
    config.validate();
    if (images.size() == 0) throw ConfigError("pretraining needs at least one image");
    const auto& cfg = model.config;
    const auto grid = cfg.grid();
    const std::size_t cells = grid.cells(), dim = cfg.block.dim;
    const std::size_t pixels = cfg.channels * cfg.patch * cfg.patch;
    const std::size_t masked = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(config.pretrain.mask_ratio * static_cast<double>(cells))));

    std::vector<Tensor> backbone;
    for (auto& [name, t] : named_tensors(model)) {
        if (name.rfind("backbone.", 0) == 0 && !t.requires_grad()) {
            t.set_requires_grad(true);
            backbone.push_back(t);
        }
    }
    Rng rng = Rng(config.seed).fork(0x9E7);
    Tensor dec_w = init::kaiming_uniform({pixels, dim}, dim, rng);
    Tensor dec_b = Tensor::zeros({pixels}, true);
    auto params = backbone;
    params.push_back(dec_w);
    params.push_back(dec_b);
    AdamW opt(params, {config.train.adam_beta1, config.train.adam_beta2, config.train.adam_eps,
                       config.train.weight_decay});

    ForwardOptions fo;
    fo.mode = Mode::Infer;
    fo.experts_enabled = false;
    const auto& ps = config.pretrain;
    std::vector<PretrainLog> log;
    for (std::size_t step = 0; step < ps.steps; ++step) {
        Tape tape;
        double value = 0.0;
        {
            TapeScope scope(tape);
            std::optional<Tensor> acc;
            for (std::size_t b = 0; b < config.train.batch; ++b) {
                const auto& s = images.samples[rng.below(images.size())];
                const auto image = rng.below(2) == 0 ? s.left_image() : s.right_image();
                std::vector<std::size_t> order(cells);
                for (std::size_t i = 0; i < cells; ++i) order[i] = i;
                for (std::size_t i = 0; i < masked; ++i) std::swap(order[i], order[i + rng.below(cells - i)]);
                std::vector<std::size_t> hidden(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(masked));
                std::sort(hidden.begin(), hidden.end());

                GatingTrace trace;
                auto tokens = encode_tokens(model, blank_cells(image, hidden, cfg.patch, grid.width), fo, trace);
                auto pred = ops::linear(ops::gather_rows(ops::slice_rows(tokens, 1, cells), hidden), dec_w, dec_b);
                auto target = ops::gather_rows(patchify(image, cfg.patch, cfg.padded_height(), cfg.padded_width()),
                                               hidden);
                auto err = ops::mean(ops::square(ops::sub(pred, target)));
                acc = acc ? ops::add(*acc, err) : err;
            }
            auto loss = ops::scale(*acc, 1.0 / static_cast<double>(config.train.batch));
            value = loss.item();
            if (!std::isfinite(value)) {
                std::ostringstream msg;
                msg << "non-finite reconstruction loss at pretrain step " << step;
                throw NumericError(msg.str());
            }
            tape.backward(loss);
        }
        clip_grad_norm(params, config.train.grad_clip);
        opt.step(one_cycle_lr(step, ps.steps, ps.learning_rate, config.train.warmup_fraction));
        opt.zero_grad();
        log.push_back({step, value});
    }
    for (auto& t : backbone) {
        t.clear_grad();
        t.set_requires_grad(false);
    }
    round_to_f32(model);
    return log;
}

}  // namespace smoe
