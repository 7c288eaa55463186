// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "model/stereo_ops.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"

namespace smoe::stereo {

Tensor correlation(const Tensor& left, const Tensor& right, std::size_t d_max) {
    if (left.rank() != 3 || left.shape() != right.shape()) {
        throw ShapeError("correlation: feature maps " + shape_str(left.shape()) + " and " +
                         shape_str(right.shape()) + " must match and be [C x H x W]");
    }
    const std::size_t c = left.dim(0), h = left.dim(1), w = left.dim(2);
    if (d_max == 0 || d_max >= w) {
        throw ConfigError("correlation: d_max " + std::to_string(d_max) + " must lie in [1, " +
                          std::to_string(w) + ") for feature width " + std::to_string(w));
    }
    const double norm = 1.0 / std::sqrt(static_cast<double>(c));
    const std::size_t hw = h * w;
    const auto fl = left.data();
    const auto fr = right.data();
    std::vector<double> out(hw * d_max, kOutOfImage);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t d = 0; d <= std::min(x, d_max - 1); ++d) {
                double acc = 0.0;
                for (std::size_t k = 0; k < c; ++k) acc += fl[k * hw + y * w + x] * fr[k * hw + y * w + x - d];
                out[(y * w + x) * d_max + d] = acc * norm;
            }
    macs::add(hw * d_max * c);
    return make_result({h, w, d_max}, std::move(out), {left, right},
                       [left, right, c, h, w, hw, d_max, norm](std::span<const double> g) {
                           auto gl = grad_target(left);
                           auto gr = grad_target(right);
                           const auto fl = left.data();
                           const auto fr = right.data();
                           for (std::size_t y = 0; y < h; ++y)
                               for (std::size_t x = 0; x < w; ++x)
                                   for (std::size_t d = 0; d <= std::min(x, d_max - 1); ++d) {
                                       const double gv = g[(y * w + x) * d_max + d] * norm;
                                       if (gv == 0.0) continue;
                                       const std::size_t pl = y * w + x, pr = y * w + x - d;
                                       for (std::size_t k = 0; k < c; ++k) {
                                           if (!gl.empty()) gl[k * hw + pl] += gv * fr[k * hw + pr];
                                           if (!gr.empty()) gr[k * hw + pr] += gv * fl[k * hw + pl];
                                       }
                                   }
                       },
                       "correlation");
}

Tensor lookup(const Tensor& volume, const Tensor& disp, std::size_t radius) {
    if (volume.rank() != 3 || disp.rank() != 2 || disp.dim(0) != volume.dim(0) || disp.dim(1) != volume.dim(1)) {
        throw ShapeError("lookup: volume " + shape_str(volume.shape()) + " and disparity " +
                         shape_str(disp.shape()) + " disagree");
    }
    const std::size_t hw = disp.numel(), dn = volume.dim(2), taps = 2 * radius + 1;
    const auto vol = volume.data();
    const auto dsp = disp.data();
    auto read = [&](std::size_t p, long i) {
        return i < 0 || i >= static_cast<long>(dn) ? 0.0 : vol[p * dn + static_cast<std::size_t>(i)];
    };
    std::vector<double> out(taps * hw);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t t = 0; t < taps; ++t) {
            const double pos = dsp[p] + static_cast<double>(t) - static_cast<double>(radius);
            const double fl = std::floor(pos);
            const double frac = pos - fl;
            const long i0 = static_cast<long>(fl);
            out[t * hw + p] = (1.0 - frac) * read(p, i0) + frac * read(p, i0 + 1);
        }
    return make_result({taps, volume.dim(0), volume.dim(1)}, std::move(out), {volume, disp},
                       [volume, disp, hw, dn, taps, radius](std::span<const double> g) {
                           auto gv = grad_target(volume);
                           auto gd = grad_target(disp);
                           const auto vol = volume.data();
                           const auto dsp = disp.data();
                           auto inside = [dn](long i) { return i >= 0 && i < static_cast<long>(dn); };
                           for (std::size_t p = 0; p < hw; ++p)
                               for (std::size_t t = 0; t < taps; ++t) {
                                   const double go = g[t * hw + p];
                                   const double pos = dsp[p] + static_cast<double>(t) - static_cast<double>(radius);
                                   const double fl = std::floor(pos);
                                   const double frac = pos - fl;
                                   const long i0 = static_cast<long>(fl);
                                   const double v0 = inside(i0) ? vol[p * dn + static_cast<std::size_t>(i0)] : 0.0;
                                   const double v1 =
                                       inside(i0 + 1) ? vol[p * dn + static_cast<std::size_t>(i0 + 1)] : 0.0;
                                   if (!gv.empty()) {
                                       if (inside(i0)) gv[p * dn + static_cast<std::size_t>(i0)] += go * (1.0 - frac);
                                       if (inside(i0 + 1)) gv[p * dn + static_cast<std::size_t>(i0 + 1)] += go * frac;
                                   }
                                   if (!gd.empty()) gd[p] += go * (v1 - v0);
                               }
                       },
                       "lookup");
}

Tensor expected_index(const Tensor& volume) {
    if (volume.rank() != 3) throw ShapeError("expected_index: volume must be [H x W x D], got " + shape_str(volume.shape()));
    const std::size_t hw = volume.dim(0) * volume.dim(1), dn = volume.dim(2);
    const auto vol = volume.data();
    std::vector<double> out(hw, 0.0);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t d = 0; d < dn; ++d) out[p] += static_cast<double>(d) * vol[p * dn + d];
    return make_result({volume.dim(0), volume.dim(1)}, std::move(out), {volume},
                       [volume, hw, dn](std::span<const double> g) {
                           auto gv = grad_target(volume);
                           for (std::size_t p = 0; p < hw; ++p)
                               for (std::size_t d = 0; d < dn; ++d) gv[p * dn + d] += static_cast<double>(d) * g[p];
                       },
                       "expected_index");
}

namespace {

struct Tap {
    std::size_t lo, hi;
    double frac;
};

std::vector<Tap> resize_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        const double src = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        taps[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 2 || x.numel() == 0 || out_h == 0 || out_w == 0) {
        throw ShapeError("upsample_bilinear: bad input " + shape_str(x.shape()));
    }
    const std::size_t h = x.dim(0), w = x.dim(1);
    const auto ty = resize_taps(h, out_h), tx = resize_taps(w, out_w);
    const auto src = x.data();
    std::vector<double> out(out_h * out_w);
    for (std::size_t i = 0; i < out_h; ++i)
        for (std::size_t j = 0; j < out_w; ++j) {
            const auto& a = ty[i];
            const auto& b = tx[j];
            const double top = (1.0 - b.frac) * src[a.lo * w + b.lo] + b.frac * src[a.lo * w + b.hi];
            const double bot = (1.0 - b.frac) * src[a.hi * w + b.lo] + b.frac * src[a.hi * w + b.hi];
            out[i * out_w + j] = (1.0 - a.frac) * top + a.frac * bot;
        }
    return make_result({out_h, out_w}, std::move(out), {x},
                       [x, w, out_h, out_w, ty, tx](std::span<const double> g) {
                           auto gx = grad_target(x);
                           for (std::size_t i = 0; i < out_h; ++i)
                               for (std::size_t j = 0; j < out_w; ++j) {
                                   const double go = g[i * out_w + j];
                                   const auto& a = ty[i];
                                   const auto& b = tx[j];
                                   gx[a.lo * w + b.lo] += go * (1.0 - a.frac) * (1.0 - b.frac);
                                   gx[a.lo * w + b.hi] += go * (1.0 - a.frac) * b.frac;
                                   gx[a.hi * w + b.lo] += go * a.frac * (1.0 - b.frac);
                                   gx[a.hi * w + b.hi] += go * a.frac * b.frac;
                               }
                       },
                       "upsample_bilinear");
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() < 1 || bias.numel() != x.dim(0)) {
        throw ShapeError("add_channel_bias: " + shape_str(bias.shape()) + " for " + shape_str(x.shape()));
    }
    const std::size_t c = x.dim(0), per = x.numel() / c;
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < per; ++i) out[k * per + i] += bias[k];
    return make_result(x.shape(), std::move(out), {x, bias},
                       [x, bias, c, per](std::span<const double> g) {
                           auto gx = grad_target(x);
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                           auto gb = grad_target(bias);
                           if (gb.empty()) return;
                           for (std::size_t k = 0; k < c; ++k)
                               for (std::size_t i = 0; i < per; ++i) gb[k] += g[k * per + i];
                       },
                       "add_channel_bias");
}

}  // namespace smoe::stereo
