// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "harness/train.hpp"

#include <cmath>
#include <sstream>

#include "core/errors.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"
#include "harness/checkpoint.hpp"
#include "harness/csv.hpp"
#include "harness/optimizer.hpp"
#include "model/losses.hpp"

namespace smoe {

DataSplits make_splits(const RunConfig& config, const data::Dataset* source) {
    data::Dataset all = source ? *source : data::generate(config.data_seed, config.dataset_size, config.data);
    if (all.params.height != config.model.image_height || all.params.width != config.model.image_width ||
        all.params.channels != config.model.channels) {
        throw ConfigError("dataset images do not match the configured image shape");
    }
    auto [train_idx, eval_idx] = data::split(all.size(), config.train_fraction, config.data_seed);
    if (train_idx.empty() || eval_idx.empty()) throw ConfigError("train/eval split leaves one side empty");
    return {all.subset(train_idx), all.subset(eval_idx)};
}

namespace {

std::vector<Tensor> optimised_tensors(StereoModel& model, bool experts_enabled) {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_tensors(model)) {
        if (!t.requires_grad()) continue;
        if (!experts_enabled && name.rfind("head.", 0) != 0) continue;
        out.push_back(t);
    }
    return out;
}

// Epoch-wise shuffled sample order over the training set.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(Rng(seed).fork(0xBA7C)) {}

    std::vector<std::size_t> next(std::size_t batch) {
        std::vector<std::size_t> out;
        while (out.size() < batch) {
            if (pos_ == order_.size()) reshuffle();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void reshuffle() {
        order_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
        for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
        pos_ = 0;
    }

    std::size_t n_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<StepLog> train_model(StereoModel& model, const RunConfig& config, const data::Dataset& train_set,
                                 const TrainOptions& options) {
    config.validate();
    if (train_set.size() == 0) throw ConfigError("training set is empty");
    const auto& ts = config.train;
    auto params = optimised_tensors(model, config.experts_enabled);
    AdamW opt(params, {ts.adam_beta1, ts.adam_beta2, ts.adam_eps, ts.weight_decay});
    BatchSampler sampler(train_set.size(), config.data_seed);
    Rng noise(config.noise_seed);

    std::vector<StepLog> log;
    log.reserve(ts.steps);
    for (std::size_t step = 0; step < ts.steps; ++step) {
        const double progress = ts.steps > 1 ? static_cast<double>(step) / static_cast<double>(ts.steps - 1) : 0.0;
        ForwardOptions fo;
        fo.mode = Mode::Train;
        fo.gumbel_temperature = ts.gumbel_tau_start + (ts.gumbel_tau_end - ts.gumbel_tau_start) * progress;
        fo.noise = &noise;
        fo.experts_enabled = config.experts_enabled;

        Tape tape;
        StepLog row;
        row.step = step;
        {
            TapeScope scope(tape);
            std::optional<Tensor> disp_sum;
            std::vector<GatingTrace> traces;
            traces.reserve(2 * ts.batch);
            for (auto i : sampler.next(ts.batch)) {
                const auto& s = train_set.samples[i];
                auto out = stereo_forward(model, s.left_image(), s.right_image(), fo);
                auto d = loss::disparity_loss(out.disparities, s.disparity_map(), config.loss.beta, s.valid_mask());
                disp_sum = disp_sum ? ops::add(*disp_sum, d) : d;
                traces.push_back(std::move(out.left_trace));
                traces.push_back(std::move(out.right_trace));
            }
            std::vector<const GatingTrace*> ptrs;
            for (const auto& t : traces) {
                ptrs.push_back(&t);
                row.kept_ratio_lora += t.mean_lora_mask();
                row.kept_ratio_adapter += t.mean_adapter_mask();
            }
            row.kept_ratio_lora /= static_cast<double>(traces.size());
            row.kept_ratio_adapter /= static_cast<double>(traces.size());

            const auto disp = ops::scale(*disp_sum, 1.0 / static_cast<double>(ts.batch));
            const auto blc = loss::balance_loss(ptrs, config.balance_variant).value;
            const auto usage = loss::usage_loss(ptrs, config.loss.gamma);
            const auto total = loss::total_loss(disp, blc, usage, config.loss);
            row.disp = disp.item();
            row.blc = blc.item();
            row.usage = usage.item();
            row.total = total.item();
            if (!std::isfinite(row.total)) {
                std::ostringstream msg;
                msg << "non-finite loss at step " << step << ": disp=" << row.disp << " blc=" << row.blc
                    << " usage=" << row.usage << " total=" << row.total;
                throw NumericError(msg.str());
            }
            tape.backward(total);
        }
        row.grad_norm = clip_grad_norm(params, ts.grad_clip);
        row.lr = one_cycle_lr(step, ts.steps, ts.learning_rate, ts.warmup_fraction);
        opt.step(row.lr);
        opt.zero_grad();
        if (options.on_step) options.on_step(row);
        log.push_back(row);
    }
    round_to_f32(model);
    return log;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<StepLog>& log) {
    CsvWriter csv(path, {"step", "disp", "blc", "usage", "total", "kept_ratio_lora", "kept_ratio_adapter"});
    for (const auto& r : log) {
        csv << r.step << r.disp << r.blc << r.usage << r.total << r.kept_ratio_lora << r.kept_ratio_adapter;
        csv.end_row();
    }
}

}  // namespace smoe
