#include "sharedrep/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace sharedrep {

Matrix Matrix::from_values(std::size_t rows, std::size_t cols, std::vector<Scalar> values) {
    if (values.size() != rows * cols) {
        throw DimensionError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " given " + std::to_string(values.size()) + " values");
    }
    for (Scalar v : values) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in matrix input");
    }
    Matrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.data_ = std::move(values);
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<Scalar> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        values.insert(values.end(), row.begin(), row.end());
    }
    return from_values(r, c, std::move(values));
}

void Matrix::fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

std::string shape_string(const Matrix& m) {
    return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

void require_shape(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

}  // namespace sharedrep
