// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "core/errors.hpp"
#include "core/kernels.hpp"

namespace smoe::ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
    }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(a.shape()));
    }
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx, const char* name) {
    const auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return make_result(a.shape(), std::move(out), {a},
                       [a, dfdx](std::span<const double> g) {
                           auto ga = grad_target(a);
                           const auto x = a.data();
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * dfdx(x[i]);
                       },
                       name);
}

std::size_t last_extent(const Tensor& x) { return x.rank() == 0 ? 1 : x.shape().back(); }

}  // namespace

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_result(a.shape(), std::move(out), {a, b},
                       [a, b](std::span<const double> g) {
                           for (const Tensor* t : {&a, &b}) {
                               auto gt = grad_target(*t);
                               for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
                           }
                       },
                       "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_result(a.shape(), std::move(out), {a, b},
                       [a, b](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                           auto gb = grad_target(b);
                           for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                       },
                       "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_result(a.shape(), std::move(out), {a, b},
                       [a, b](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b[i];
                           auto gb = grad_target(b);
                           for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * a[i];
                       },
                       "mul");
}

Tensor scale(const Tensor& a, double factor) {
    return unary(a, [factor](double x) { return x * factor; },
                 [factor](double) { return factor; }, "scale");
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(a, [value](double x) { return x + value; }, [](double) { return 1.0; },
                 "add_scalar");
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) {
        throw ShapeError("scale_by: factor must hold one element, got " + shape_str(s.shape()));
    }
    const double f = s[0];
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * f;
    return make_result(a.shape(), std::move(out), {a, s},
                       [a, s](std::span<const double> g) {
                           auto ga = grad_target(a);
                           const double f = s[0];
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * f;
                           auto gs = grad_target(s);
                           if (!gs.empty()) {
                               double acc = 0.0;
                               for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * a[i];
                               gs[0] += acc;
                           }
                       },
                       "scale_by");
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
        },
        "gelu");
}

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); },
                 "exp");
}

Tensor log(const Tensor& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; }, "log");
}

Tensor reciprocal(const Tensor& a) {
    return unary(a, [](double x) { return 1.0 / x; }, [](double x) { return -1.0 / (x * x); }, "reciprocal");
}

Tensor square(const Tensor& a) {
    return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; }, "square");
}

Tensor abs(const Tensor& a) {
    return unary(a, [](double x) { return std::fabs(x); },
                 [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, "abs");
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary(a, [=](double x) { return std::clamp(x, lo, hi); },
                 [=](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; }, "clamp");
}

// ---------------------------------------------------------------------------

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_bias");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (bias.numel() != cols) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
    }
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + bias[c];
    return make_result(x.shape(), std::move(out), {x, bias},
                       [x, bias, rows, cols](std::span<const double> g) {
                           auto gx = grad_target(x);
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                           auto gb = grad_target(bias);
                           if (!gb.empty()) {
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                           }
                       },
                       "add_bias");
}

Tensor scale_rows(const Tensor& x, const Tensor& factors) {
    require_rank(x, 2, "scale_rows");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (factors.numel() != rows) {
        throw ShapeError("scale_rows: factors " + shape_str(factors.shape()) +
                         " do not match rows of " + shape_str(x.shape()));
    }
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] * factors[r];
    return make_result(x.shape(), std::move(out), {x, factors},
                       [x, factors, rows, cols](std::span<const double> g) {
                           auto gx = grad_target(x);
                           if (!gx.empty()) {
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < cols; ++c)
                                       gx[r * cols + c] += g[r * cols + c] * factors[r];
                           }
                           auto gf = grad_target(factors);
                           if (!gf.empty()) {
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double acc = 0.0;
                                   for (std::size_t c = 0; c < cols; ++c)
                                       acc += g[r * cols + c] * x[r * cols + c];
                                   gf[r] += acc;
                               }
                           }
                       },
                       "scale_rows");
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    macs::add(m * k * n);
    return make_result({m, n}, std::move(out), {a, b},
                       [a, b, m, k, n](std::span<const double> g) {
                           auto ga = grad_target(a);
                           if (!ga.empty()) kernels::gemm_nt(g.data(), b.data().data(), ga.data(), m, n, k);
                           auto gb = grad_target(b);
                           if (!gb.empty()) kernels::gemm_tn(a.data().data(), g.data(), gb.data(), k, m, n);
                       },
                       "matmul");
}

Tensor linear(const Tensor& x, const Tensor& w) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    }
    const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(0);
    std::vector<double> out(m * n, 0.0);
    kernels::gemm_nt(x.data().data(), w.data().data(), out.data(), m, k, n);
    macs::add(m * k * n);
    return make_result({m, n}, std::move(out), {x, w},
                       [x, w, m, k, n](std::span<const double> g) {
                           // y = x w^T: dx = g w, dw = g^T x
                           auto gx = grad_target(x);
                           if (!gx.empty()) kernels::gemm_nn(g.data(), w.data().data(), gx.data(), m, n, k);
                           auto gw = grad_target(w);
                           if (!gw.empty()) kernels::gemm_tn(g.data(), x.data().data(), gw.data(), n, m, k);
                       },
                       "linear");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    return add_bias(linear(x, w), bias);
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    return make_result({c, r}, std::move(out), {a},
                       [a, r, c](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                       },
                       "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result(std::move(shape), std::move(out), {a},
                       [a](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                       },
                       "reshape");
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result({}, {s}, {a},
                       [a](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (auto& v : ga) v += g[0];
                       },
                       "sum");
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of empty tensor");
    const double n = static_cast<double>(a.numel());
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result({}, {s / n}, {a},
                       [a, n](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (auto& v : ga) v += g[0] / n;
                       },
                       "mean");
}

Tensor variance(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("variance of empty tensor");
    const double n = static_cast<double>(a.numel());
    double mu = 0.0;
    for (double v : a.data()) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : a.data()) var += (v - mu) * (v - mu);
    var /= n;
    return make_result({}, {var}, {a},
                       [a, n, mu](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (std::size_t i = 0; i < ga.size(); ++i)
                               ga[i] += g[0] * 2.0 * (a[i] - mu) / n;
                       },
                       "variance");
}

Tensor sum_rows(const Tensor& a) {
    require_rank(a, 2, "sum_rows");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    std::vector<double> out(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += a[r * cols + c];
    return make_result({cols}, std::move(out), {a},
                       [a, rows, cols](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[c];
                       },
                       "sum_rows");
}

Tensor mean_rows(const Tensor& a) {
    require_rank(a, 2, "mean_rows");
    const std::size_t rows = a.dim(0);
    return reshape(scale(sum_rows(a), 1.0 / static_cast<double>(rows)), {1, a.dim(1)});
}

// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, double temperature) {
    if (!(temperature > 0.0)) {
        throw ConfigError("softmax: temperature must be positive, got " + std::to_string(temperature));
    }
    const std::size_t m = last_extent(x);
    const std::size_t rows = m == 0 ? 0 : x.numel() / m;
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * m;
        double* o = out.data() + r * m;
        const double mx = *std::max_element(in, in + m);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            o[j] = std::exp((in[j] - mx) / temperature);
            z += o[j];
        }
        for (std::size_t j = 0; j < m; ++j) o[j] /= z;
    }
    auto y = std::make_shared<const std::vector<double>>(out);
    return make_result(x.shape(), std::move(out), {x},
                       [x, y, m, rows, temperature](std::span<const double> g) {
                           auto gx = grad_target(x);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* yr = y->data() + r * m;
                               const double* gr = g.data() + r * m;
                               double dot = 0.0;
                               for (std::size_t j = 0; j < m; ++j) dot += gr[j] * yr[j];
                               for (std::size_t j = 0; j < m; ++j)
                                   gx[r * m + j] += yr[j] * (gr[j] - dot) / temperature;
                           }
                       },
                       "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 2, "layer_norm");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (gamma.numel() != cols || beta.numel() != cols) {
        throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
    }
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += in[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t c = 0; c < cols; ++c) {
            const double h = (in[c] - mu) * is;
            (*xhat)[r * cols + c] = h;
            out[r * cols + c] = h * gamma[c] + beta[c];
        }
    }
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat, inv_std, rows, cols](std::span<const double> g) {
            auto gx = grad_target(x);
            auto gg = grad_target(gamma);
            auto gb = grad_target(beta);
            const double n = static_cast<double>(cols);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* h = xhat->data() + r * cols;
                const double* gr = g.data() + r * cols;
                if (!gg.empty())
                    for (std::size_t c = 0; c < cols; ++c) gg[c] += gr[c] * h[c];
                if (!gb.empty())
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += gr[c];
                if (gx.empty()) continue;
                double mean_d = 0.0, mean_dh = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    const double d = gr[c] * gamma[c];
                    mean_d += d;
                    mean_dh += d * h[c];
                }
                mean_d /= n;
                mean_dh /= n;
                for (std::size_t c = 0; c < cols; ++c) {
                    const double d = gr[c] * gamma[c];
                    gx[r * cols + c] += (*inv_std)[r] * (d - mean_d - h[c] * mean_dh);
                }
            }
        },
        "layer_norm");
}

// ---------------------------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
    const std::size_t cols = parts.front().rank() == 2 ? parts.front().dim(1) : 0;
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != cols) {
            throw ShapeError("concat_rows: " + shape_str(p.shape()) + " does not match " +
                             shape_str(parts.front().shape()));
        }
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_result({rows, cols}, std::move(out), parts,
                       [parts](std::span<const double> g) {
                           std::size_t offset = 0;
                           for (const auto& p : parts) {
                               auto gp = grad_target(p);
                               for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
                               offset += p.numel();
                           }
                       },
                       "concat_rows");
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    require_rank(a, 2, "slice_rows");
    const std::size_t cols = a.dim(1);
    if (start + count > a.dim(0)) {
        throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " + shape_str(a.shape()));
    }
    std::vector<double> out(a.data().begin() + start * cols,
                            a.data().begin() + (start + count) * cols);
    return make_result({count, cols}, std::move(out), {a},
                       [a, start, cols](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[start * cols + i] += g[i];
                       },
                       "slice_rows");
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
    require_rank(a, 2, "gather_rows");
    const std::size_t cols = a.dim(1), total = a.dim(0);
    std::vector<double> out(rows.size() * cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= total) throw ShapeError("gather_rows: row index out of range");
        std::copy_n(a.data().begin() + rows[i] * cols, cols, out.begin() + i * cols);
    }
    return make_result({rows.size(), cols}, std::move(out), {a},
                       [a, rows, cols](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (std::size_t i = 0; i < rows.size(); ++i)
                               for (std::size_t c = 0; c < cols; ++c)
                                   ga[rows[i] * cols + c] += g[i * cols + c];
                       },
                       "gather_rows");
}

Tensor scatter_add_rows(const Tensor& src, const std::vector<std::size_t>& rows,
                        std::size_t total_rows) {
    require_rank(src, 2, "scatter_add_rows");
    if (src.dim(0) != rows.size()) {
        throw ShapeError("scatter_add_rows: " + std::to_string(rows.size()) + " indices for " +
                         shape_str(src.shape()));
    }
    const std::size_t cols = src.dim(1);
    std::vector<double> out(total_rows * cols, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= total_rows) throw ShapeError("scatter_add_rows: row index out of range");
        for (std::size_t c = 0; c < cols; ++c) out[rows[i] * cols + c] += src[i * cols + c];
    }
    return make_result({total_rows, cols}, std::move(out), {src},
                       [src, rows, cols](std::span<const double> g) {
                           auto gs = grad_target(src);
                           for (std::size_t i = 0; i < rows.size(); ++i)
                               for (std::size_t c = 0; c < cols; ++c)
                                   gs[i * cols + c] += g[rows[i] * cols + c];
                       },
                       "scatter_add_rows");
}

Tensor gather(const Tensor& a, const std::vector<std::size_t>& index) {
    require_rank(a, 2, "gather");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    if (index.size() != rows) {
        throw ShapeError("gather: " + std::to_string(index.size()) + " indices for " +
                         shape_str(a.shape()));
    }
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (index[r] >= cols) throw ShapeError("gather: column index out of range");
        out[r] = a[r * cols + index[r]];
    }
    return make_result({rows}, std::move(out), {a},
                       [a, index, cols](std::span<const double> g) {
                           auto ga = grad_target(a);
                           for (std::size_t r = 0; r < index.size(); ++r) ga[r * cols + index[r]] += g[r];
                       },
                       "gather");
}

TopK top_k(const Tensor& x, std::size_t k) {
    const std::size_t m = last_extent(x);
    if (k == 0 || k > m) {
        throw ShapeError("top_k: k=" + std::to_string(k) + " invalid for " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / m;
    std::vector<std::size_t> indices(rows * k);
    std::vector<double> values(rows * k);
    std::vector<std::size_t> order(m);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * m;
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [in](std::size_t a, std::size_t b) { return in[a] > in[b]; });
        for (std::size_t j = 0; j < k; ++j) {
            indices[r * k + j] = order[j];
            values[r * k + j] = in[order[j]];
        }
    }
    Tensor vals = make_result({rows, k}, std::move(values), {x},
                              [x, indices, m, k](std::span<const double> g) {
                                  auto gx = grad_target(x);
                                  for (std::size_t i = 0; i < indices.size(); ++i)
                                      gx[(i / k) * m + indices[i]] += g[i];
                              },
                              "top_k");
    return TopK{std::move(vals), std::move(indices)};
}

// ---------------------------------------------------------------------------

namespace {

struct ConvGeometry {
    std::size_t c_in, h, w, c_out, k, pad;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const char* op) {
    if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3)) {
        throw ShapeError(std::string(op) + ": input " + shape_str(x.shape()) +
                         " incompatible with weight " + shape_str(w.shape()));
    }
    if (w.dim(2) % 2 == 0) {
        throw ConfigError(std::string(op) + ": kernel size must be odd, got " +
                          std::to_string(w.dim(2)));
    }
    return {x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), (w.dim(2) - 1) / 2};
}

// Unfolds a zero-padded neighbourhood per output position into columns:
// cols[(c * k + dy) * k + dx][p] for the listed positions.
void im2col(const double* x, const ConvGeometry& g, std::size_t pad,
            const std::vector<std::size_t>* positions, std::size_t out_h, std::size_t out_w,
            double* cols) {
    const std::size_t np = positions ? positions->size() : out_h * out_w;
    for (std::size_t c = 0; c < g.c_in; ++c)
        for (std::size_t dy = 0; dy < g.k; ++dy)
            for (std::size_t dx = 0; dx < g.k; ++dx) {
                double* row = cols + ((c * g.k + dy) * g.k + dx) * np;
                for (std::size_t p = 0; p < np; ++p) {
                    const std::size_t pos = positions ? (*positions)[p] : p;
                    const long yy = static_cast<long>(pos / out_w + dy) - static_cast<long>(pad);
                    const long xx = static_cast<long>(pos % out_w + dx) - static_cast<long>(pad);
                    row[p] = (yy >= 0 && xx >= 0 && yy < static_cast<long>(g.h) &&
                              xx < static_cast<long>(g.w))
                                 ? x[(c * g.h + static_cast<std::size_t>(yy)) * g.w +
                                     static_cast<std::size_t>(xx)]
                                 : 0.0;
                }
            }
}

void col2im(const double* cols, const ConvGeometry& g, std::size_t pad,
            const std::vector<std::size_t>* positions, std::size_t out_h, std::size_t out_w,
            double* gx) {
    const std::size_t np = positions ? positions->size() : out_h * out_w;
    for (std::size_t c = 0; c < g.c_in; ++c)
        for (std::size_t dy = 0; dy < g.k; ++dy)
            for (std::size_t dx = 0; dx < g.k; ++dx) {
                const double* row = cols + ((c * g.k + dy) * g.k + dx) * np;
                for (std::size_t p = 0; p < np; ++p) {
                    const std::size_t pos = positions ? (*positions)[p] : p;
                    const long yy = static_cast<long>(pos / out_w + dy) - static_cast<long>(pad);
                    const long xx = static_cast<long>(pos % out_w + dx) - static_cast<long>(pad);
                    if (yy >= 0 && xx >= 0 && yy < static_cast<long>(g.h) &&
                        xx < static_cast<long>(g.w)) {
                        gx[(c * g.h + static_cast<std::size_t>(yy)) * g.w +
                           static_cast<std::size_t>(xx)] += row[p];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t padding) {
    const auto g = conv_geometry(x, w, "conv2d");
    if (padding != g.pad) {
        throw ConfigError("conv2d: padding " + std::to_string(padding) + " is not same-padding " +
                          std::to_string(g.pad) + " for kernel " + std::to_string(g.k));
    }
    const std::size_t hw = g.h * g.w, kk = g.c_in * g.k * g.k;
    auto cols = std::make_shared<std::vector<double>>(kk * hw);
    if (g.k == 1) {
        std::copy(x.data().begin(), x.data().end(), cols->begin());
    } else {
        im2col(x.data().data(), g, g.pad, nullptr, g.h, g.w, cols->data());
    }
    std::vector<double> out(g.c_out * hw, 0.0);
    // out[c_out x hw] = w[c_out x kk] * cols[kk x hw]
    kernels::gemm_nn(w.data().data(), cols->data(), out.data(), g.c_out, kk, hw);
    macs::add(g.c_out * kk * hw);
    return make_result({g.c_out, g.h, g.w}, std::move(out), {x, w},
                       [x, w, g, cols, hw, kk](std::span<const double> gout) {
                           auto gw = grad_target(w);
                           if (!gw.empty())
                               kernels::gemm_nt(gout.data(), cols->data(), gw.data(), g.c_out, hw, kk);
                           auto gx = grad_target(x);
                           if (gx.empty()) return;
                           std::vector<double> gcols(kk * hw, 0.0);
                           kernels::gemm_tn(w.data().data(), gout.data(), gcols.data(), kk, g.c_out, hw);
                           if (g.k == 1) {
                               for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gcols[i];
                           } else {
                               col2im(gcols.data(), g, g.pad, nullptr, g.h, g.w, gx.data());
                           }
                       },
                       "conv2d");
}

Tensor conv2d_at(const Tensor& x, const Tensor& w, const std::vector<std::size_t>& positions) {
    const auto g = conv_geometry(x, w, "conv2d_at");
    const std::size_t np = positions.size(), kk = g.c_in * g.k * g.k;
    for (auto p : positions) {
        if (p >= g.h * g.w) throw ShapeError("conv2d_at: position out of range");
    }
    auto cols = std::make_shared<std::vector<double>>(kk * np);
    im2col(x.data().data(), g, g.pad, &positions, g.h, g.w, cols->data());
    // out[np x c_out] = cols^T[np x kk] * w^T[kk x c_out]
    std::vector<double> out(np * g.c_out, 0.0);
    kernels::gemm_tt(cols->data(), w.data().data(), out.data(), np, kk, g.c_out);
    macs::add(np * kk * g.c_out);
    return make_result({np, g.c_out}, std::move(out), {x, w},
                       [x, w, g, cols, positions, np, kk](std::span<const double> gout) {
                           auto gw = grad_target(w);
                           // gw[c_out x kk] += gout^T[c_out x np] * cols^T[np x kk]
                           if (!gw.empty())
                               kernels::gemm_tt(gout.data(), cols->data(), gw.data(), g.c_out, np, kk);
                           auto gx = grad_target(x);
                           if (gx.empty()) return;
                           // gcols[kk x np] = w^T[kk x c_out] * gout^T[c_out x np]
                           std::vector<double> gcols(kk * np, 0.0);
                           kernels::gemm_tt(w.data().data(), gout.data(), gcols.data(), kk, g.c_out, np);
                           col2im(gcols.data(), g, g.pad, &positions, g.h, g.w, gx.data());
                       },
                       "conv2d_at");
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
    require_rank(q, 2, "multi_head_attention");
    require_same_shape(q, k, "multi_head_attention");
    require_same_shape(q, v, "multi_head_attention");
    const std::size_t n = q.dim(0), d = q.dim(1);
    if (heads == 0 || d % heads != 0) {
        throw ShapeError("multi_head_attention: width " + std::to_string(d) +
                         " not divisible into " + std::to_string(heads) + " heads");
    }
    const std::size_t dh = d / heads;
    const double scale_qk = 1.0 / std::sqrt(static_cast<double>(dh));

    auto split = [n, d, dh](const Tensor& t, std::size_t h) {
        std::vector<double> out(n * dh);
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(t.data().begin() + i * d + h * dh, dh, out.begin() + i * dh);
        return out;
    };

    auto probs = std::make_shared<std::vector<double>>(heads * n * n);
    std::vector<double> out(n * d, 0.0);
    std::vector<double> oh(n * dh);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto qh = split(q, h), kh = split(k, h), vh = split(v, h);
        double* p = probs->data() + h * n * n;
        std::fill(p, p + n * n, 0.0);
        kernels::gemm_nt(qh.data(), kh.data(), p, n, dh, n);
        for (std::size_t i = 0; i < n; ++i) {
            double* row = p + i * n;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                row[j] *= scale_qk;
                mx = std::max(mx, row[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - mx);
                z += row[j];
            }
            for (std::size_t j = 0; j < n; ++j) row[j] /= z;
        }
        std::fill(oh.begin(), oh.end(), 0.0);
        kernels::gemm_nn(p, vh.data(), oh.data(), n, n, dh);
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(oh.begin() + i * dh, dh, out.begin() + i * d + h * dh);
    }
    macs::add(2 * heads * n * n * dh);

    return make_result(
        {n, d}, std::move(out), {q, k, v},
        [q, k, v, probs, heads, n, d, dh, scale_qk, split](std::span<const double> g) {
            auto gq = grad_target(q);
            auto gk = grad_target(k);
            auto gv = grad_target(v);
            std::vector<double> go(n * dh), dp(n * n), dqh(n * dh), dkh(n * dh), dvh(n * dh);
            for (std::size_t h = 0; h < heads; ++h) {
                const auto qh = split(q, h), kh = split(k, h), vh = split(v, h);
                const double* p = probs->data() + h * n * n;
                for (std::size_t i = 0; i < n; ++i)
                    std::copy_n(g.begin() + i * d + h * dh, dh, go.begin() + i * dh);
                // dV = P^T dO ; dP = dO V^T
                std::fill(dvh.begin(), dvh.end(), 0.0);
                kernels::gemm_tn(p, go.data(), dvh.data(), n, n, dh);
                std::fill(dp.begin(), dp.end(), 0.0);
                kernels::gemm_nt(go.data(), vh.data(), dp.data(), n, dh, n);
                // dS = P * (dP - rowsum(dP * P)), then fold in the 1/sqrt(dh) scale
                for (std::size_t i = 0; i < n; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += dp[i * n + j] * p[i * n + j];
                    for (std::size_t j = 0; j < n; ++j)
                        dp[i * n + j] = p[i * n + j] * (dp[i * n + j] - dot) * scale_qk;
                }
                std::fill(dqh.begin(), dqh.end(), 0.0);
                kernels::gemm_nn(dp.data(), kh.data(), dqh.data(), n, n, dh);
                std::fill(dkh.begin(), dkh.end(), 0.0);
                kernels::gemm_tn(dp.data(), qh.data(), dkh.data(), n, n, dh);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t c = 0; c < dh; ++c) {
                        const std::size_t at = i * d + h * dh + c;
                        if (!gq.empty()) gq[at] += dqh[i * dh + c];
                        if (!gk.empty()) gk[at] += dkh[i * dh + c];
                        if (!gv.empty()) gv[at] += dvh[i * dh + c];
                    }
            }
        },
        "multi_head_attention");
}

}  // namespace smoe::ops
