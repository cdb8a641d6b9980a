#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sharedrep/errors.hpp"

namespace sharedrep {

#ifdef SHAREDREP_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

using Vector = std::vector<Scalar>;

/// Dense row-major matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, Scalar fill = Scalar{0})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    /// Builds a matrix from external values; rejects wrong sizes and
    /// non-finite entries.
    static Matrix from_values(std::size_t rows, std::size_t cols, std::vector<Scalar> values);

    /// Convenience for literals in tests and examples.
    static Matrix from_rows(std::initializer_list<std::initializer_list<Scalar>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    Scalar& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    Scalar operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<Scalar> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const Scalar> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<Scalar> values() noexcept { return data_; }
    std::span<const Scalar> values() const noexcept { return data_; }
    Scalar* data() noexcept { return data_.data(); }
    const Scalar* data() const noexcept { return data_.data(); }

    void fill(Scalar v);
    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Scalar> data_;
};

std::string shape_string(const Matrix& m);

/// Throws DimensionError with `what` when the condition fails.
void require_shape(bool ok, const std::string& what);

}  // namespace sharedrep
