#include "sharedrep/kernels.hpp"

#include <algorithm>

namespace sharedrep::kernels {

namespace {

void check_gemm(const Matrix& a, const Matrix& b, const Matrix& c, std::size_t m, std::size_t k,
                std::size_t kb, std::size_t n) {
    require_shape(k == kb, "gemm inner dimension mismatch: " + shape_string(a) + " vs " +
                               shape_string(b));
    require_shape(c.rows() == m && c.cols() == n,
                  "gemm output shape " + shape_string(c) + " does not match");
}

}  // namespace

void gemm(const Matrix& a, const Matrix& b, Matrix& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    check_gemm(a, b, c, m, k, b.rows(), n);
    const Scalar* pa = a.data();
    const Scalar* pb = b.data();
    Scalar* pc = c.data();
    const long rows = static_cast<long>(m);
#pragma omp parallel for if (m * k * n >= kParallelThreshold) schedule(static)
    for (long i = 0; i < rows; ++i) {
        Scalar* crow = pc + i * n;
        std::fill(crow, crow + n, Scalar{0});
        for (std::size_t p = 0; p < k; ++p) {
            const Scalar aip = pa[i * k + p];
            const Scalar* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
    // a: [m x k], b: [m x n], c: [k x n]
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    check_gemm(a, b, c, k, m, b.rows(), n);
    const Scalar* pa = a.data();
    const Scalar* pb = b.data();
    Scalar* pc = c.data();
    const long out_rows = static_cast<long>(k);
#pragma omp parallel for if (m * k * n >= kParallelThreshold) schedule(static)
    for (long p = 0; p < out_rows; ++p) {
        Scalar* crow = pc + p * n;
        std::fill(crow, crow + n, Scalar{0});
        for (std::size_t i = 0; i < m; ++i) {
            const Scalar aip = pa[i * k + p];
            const Scalar* brow = pb + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    // a: [m x k], b: [n x k], c: [m x n]
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    check_gemm(a, b, c, m, k, b.cols(), n);
    const Scalar* pa = a.data();
    const Scalar* pb = b.data();
    Scalar* pc = c.data();
    const long rows = static_cast<long>(m);
#pragma omp parallel for if (m * k * n >= kParallelThreshold) schedule(static)
    for (long i = 0; i < rows; ++i) {
        const Scalar* arow = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const Scalar* brow = pb + j * k;
            Scalar acc{0};
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            pc[i * n + j] = acc;
        }
    }
}

void column_sums(const Matrix& a, std::span<Scalar> out) {
    require_shape(out.size() == a.cols(), "column_sums output length mismatch");
    std::fill(out.begin(), out.end(), Scalar{0});
    const std::size_t m = a.rows(), n = a.cols();
    const Scalar* pa = a.data();
    const long cols = static_cast<long>(n);
#pragma omp parallel for if (m * n >= kParallelThreshold) schedule(static)
    for (long j = 0; j < cols; ++j) {
        Scalar acc{0};
        for (std::size_t i = 0; i < m; ++i) acc += pa[i * n + j];
        out[j] = acc;
    }
}

namespace reference {

void gemm(const Matrix& a, const Matrix& b, Matrix& c) {
    check_gemm(a, b, c, a.rows(), a.cols(), b.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            Scalar acc{0};
            for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
            c(i, j) = acc;
        }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
    check_gemm(a, b, c, a.cols(), a.rows(), b.rows(), b.cols());
    for (std::size_t p = 0; p < a.cols(); ++p)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            Scalar acc{0};
            for (std::size_t i = 0; i < a.rows(); ++i) acc += a(i, p) * b(i, j);
            c(p, j) = acc;
        }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    check_gemm(a, b, c, a.rows(), a.cols(), b.cols(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            Scalar acc{0};
            for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(j, p);
            c(i, j) = acc;
        }
}

void column_sums(const Matrix& a, std::span<Scalar> out) {
    require_shape(out.size() == a.cols(), "column_sums output length mismatch");
    for (std::size_t j = 0; j < a.cols(); ++j) {
        Scalar acc{0};
        for (std::size_t i = 0; i < a.rows(); ++i) acc += a(i, j);
        out[j] = acc;
    }
}

}  // namespace reference

}  // namespace sharedrep::kernels
