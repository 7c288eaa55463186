// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "core/kernels.hpp"

#include <Eigen/Core>

namespace smoe::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t inner, std::size_t n) {
    if (m == 0 || n == 0 || inner == 0) return;
    Map(c, idx(m), idx(n)).noalias() += ConstMap(a, idx(m), idx(inner)) * ConstMap(b, idx(inner), idx(n));
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t inner, std::size_t n) {
    if (m == 0 || n == 0 || inner == 0) return;
    Map(c, idx(m), idx(n)).noalias() +=
        ConstMap(a, idx(m), idx(inner)) * ConstMap(b, idx(n), idx(inner)).transpose();
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t inner, std::size_t n) {
    if (m == 0 || n == 0 || inner == 0) return;
    Map(c, idx(m), idx(n)).noalias() +=
        ConstMap(a, idx(inner), idx(m)).transpose() * ConstMap(b, idx(inner), idx(n));
}

void gemm_tt(const double* a, const double* b, double* c, std::size_t m, std::size_t inner, std::size_t n) {
    if (m == 0 || n == 0 || inner == 0) return;
    Map(c, idx(m), idx(n)).noalias() +=
        ConstMap(a, idx(inner), idx(m)).transpose() * ConstMap(b, idx(n), idx(inner)).transpose();
}

}  // namespace smoe::kernels
