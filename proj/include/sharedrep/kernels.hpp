#pragma once

#include "sharedrep/matrix.hpp"

// Dense products used by the layers. The default entry points are OpenMP
// parallel over output rows; `reference` holds the plain serial loops the
// tests compare against. Both accumulate every output element in ascending
// inner-index order, so their results are bit-identical for any thread count.
namespace sharedrep::kernels {

/// C = A * B
void gemm(const Matrix& a, const Matrix& b, Matrix& c);
/// C = A^T * B
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c);
/// C = A * B^T
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);
/// out[j] = sum_i A(i, j)
void column_sums(const Matrix& a, std::span<Scalar> out);

namespace reference {
void gemm(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);
void column_sums(const Matrix& a, std::span<Scalar> out);
}  // namespace reference

/// Work (multiply-adds) below which the parallel kernels stay serial.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

}  // namespace sharedrep::kernels
