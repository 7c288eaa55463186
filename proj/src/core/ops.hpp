// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Shapes are checked eagerly; mismatches raise
// ShapeError naming both operands. Broadcasting is limited to the explicit
// row/column/scalar variants below.

#pragma once

#include <cstddef>
#include <vector>

#include "core/tensor.hpp"

namespace smoe::ops {

// -- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// a * s where s holds a single element; gradient flows to both.
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);  // subgradient 0 at 0
Tensor clamp(const Tensor& a, double lo, double hi);

// -- broadcasts over 2-D [rows x cols] ---------------------------------------
Tensor add_bias(const Tensor& x, const Tensor& bias);      // bias: [cols]
Tensor scale_rows(const Tensor& x, const Tensor& factors);  // factors: [rows]

// -- linear algebra ----------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] * [k x n]
// x * w^T (+ bias): the usual dense layer with w stored [out x in].
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// -- reductions --------------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor variance(const Tensor& a);  // population variance over all elements
Tensor sum_rows(const Tensor& a);   // [rows x cols] -> [cols]
Tensor mean_rows(const Tensor& a);  // [rows x cols] -> [1 x cols]

// -- normalisation -----------------------------------------------------------
// Softmax over the last axis of exp(x / temperature), max-stabilised.
Tensor softmax(const Tensor& x, double temperature = 1.0);
// Per-row layer norm over the last axis with affine gamma/beta of [cols].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// -- structure ---------------------------------------------------------------
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows);
// out[rows[i]] += src[i]; out has `total_rows` rows.
Tensor scatter_add_rows(const Tensor& src, const std::vector<std::size_t>& rows,
                        std::size_t total_rows);
// out[r] = a[r, index[r]] for a 2-D tensor.
Tensor gather(const Tensor& a, const std::vector<std::size_t>& index);

struct TopK {
    Tensor values;                     // [rows x k]
    std::vector<std::size_t> indices;  // row-major [rows x k]
};
// Per-row top-k along the last axis, descending; ties go to the lower index.
// Values carry gradient, indices do not.
TopK top_k(const Tensor& x, std::size_t k);

// -- convolution / attention ---------------------------------------------------
// Cross-correlation with zero padding. x: [C_in x H x W], w: [C_out x C_in x k x k].
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t padding);
// Same-padded conv2d evaluated only at the given flat positions (y * W + x).
// Returns [positions x C_out].
Tensor conv2d_at(const Tensor& x, const Tensor& w, const std::vector<std::size_t>& positions);
// Scaled dot-product attention over [N x D] q/k/v split into `heads` heads.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

}  // namespace smoe::ops
