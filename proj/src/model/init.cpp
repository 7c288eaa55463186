// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "model/init.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>

namespace smoe::init {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor orthogonal(std::size_t rows, std::size_t cols, Rng& rng, double gain) {
    const auto tall = static_cast<Eigen::Index>(std::max(rows, cols));
    const auto wide = static_cast<Eigen::Index>(std::min(rows, cols));
    Eigen::MatrixXd g(tall, wide);
    for (Eigen::Index j = 0; j < wide; ++j)
        for (Eigen::Index i = 0; i < tall; ++i) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, wide);
    // Sign convention from R's diagonal makes the draw unique.
    const Eigen::MatrixXd r = qr.matrixQR();
    for (Eigen::Index j = 0; j < wide; ++j)
        if (r(j, j) < 0) q.col(j) *= -1.0;

    std::vector<double> v(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            const double e = rows >= cols ? q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
                                          : q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
            v[i * cols + j] = gain * e;
        }
    return Tensor::from({rows, cols}, std::move(v), false);
}

Tensor normal(Shape shape, double std, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = std * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), false);
}

}  // namespace smoe::init
