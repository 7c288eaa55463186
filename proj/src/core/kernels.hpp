// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0
//
// Row-major GEMM kernels on raw buffers. All accumulate into C (C += ...),
// with C of shape [m x n] and `inner` the contracted extent:
//   gemm_nn: A [m x inner],  B [inner x n]
//   gemm_nt: A [m x inner],  B [n x inner]
//   gemm_tn: A [inner x m],  B [inner x n]
//   gemm_tt: A [inner x m],  B [n x inner]

#pragma once

#include <cstddef>

namespace smoe::kernels {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t inner, std::size_t n);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t inner, std::size_t n);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t inner, std::size_t n);
void gemm_tt(const double* a, const double* b, double* c, std::size_t m, std::size_t inner, std::size_t n);

}  // namespace smoe::kernels
