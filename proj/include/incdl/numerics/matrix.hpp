#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "incdl/error.hpp"

namespace incdl {

using Vector = std::vector<double>;

/// Dense real matrix, row-major storage.
///
/// A matrix with zero columns is allowed and represents an empty dictionary;
/// every arithmetic operation otherwise expects rows >= 1 and cols >= 1.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& row : rows) {
            detail::require(row.size() == cols_, "Matrix: ragged initializer");
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix eye(n, n);
        for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
        return eye;
    }

    /// Builds a matrix whose j-th column is columns[j].
    static Matrix from_columns(std::size_t rows, std::span<const Vector> columns) {
        Matrix out(rows, columns.size());
        for (std::size_t j = 0; j < columns.size(); ++j) out.set_column(j, columns[j]);
        return out;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Vector column(std::size_t c) const {
        Vector out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    void set_column(std::size_t c, std::span<const double> values) {
        detail::require(values.size() == rows_, "Matrix::set_column: length mismatch");
        for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<const double> values() const noexcept { return data_; }

    Matrix& operator+=(const Matrix& other) {
        check_same_shape(other, "Matrix::operator+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    Matrix& operator-=(const Matrix& other) {
        check_same_shape(other, "Matrix::operator-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
        return *this;
    }

    Matrix& operator*=(double s) {
        for (double& x : data_) x *= s;
        return *this;
    }

    /// this += s * other
    void add_scaled(const Matrix& other, double s) {
        check_same_shape(other, "Matrix::add_scaled");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    void check_same_shape(const Matrix& other, const char* where) const {
        if (rows_ != other.rows_ || cols_ != other.cols_)
            throw ArgumentError(std::string(where) + ": shape mismatch");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(double s, Matrix a) { return a *= s; }

// ---------------------------------------------------------------------------
// vector helpers

inline double dot(std::span<const double> a, std::span<const double> b) {
    detail::require(a.size() == b.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Normalizes in place; returns the original norm. Leaves a zero vector alone.
inline double normalize(std::span<double> a) {
    const double nrm = norm2(a);
    if (nrm > 0.0)
        for (double& x : a) x /= nrm;
    return nrm;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
    detail::require(a.size() == b.size(), "distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// products

/// a * b. Loop order i-k-j keeps the inner loop contiguous in both b and the result.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ArgumentError("matmul: a.cols (" + std::to_string(a.cols()) + ") != b.rows (" +
                            std::to_string(b.rows()) + ")");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

/// a * x
inline Vector multiply(const Matrix& a, std::span<const double> x) {
    detail::require(x.size() == a.cols(), "multiply: length mismatch");
    Vector out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto r = a.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += r[j] * x[j];
        out[i] = s;
    }
    return out;
}

/// a^T * y
inline Vector multiply_transposed(const Matrix& a, std::span<const double> y) {
    detail::require(y.size() == a.rows(), "multiply_transposed: length mismatch");
    Vector out(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double yi = y[i];
        if (yi == 0.0) continue;
        const auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] += r[j] * yi;
    }
    return out;
}

inline double frobenius_norm(const Matrix& a) { return norm2(a.values()); }

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double x : a.values()) m = std::max(m, std::abs(x));
    return m;
}

inline double column_norm(const Matrix& a, std::size_t c) {
    double s = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, c) * a(r, c);
    return std::sqrt(s);
}

/// Rescales every nonzero column to unit l2 norm.
inline void normalize_columns(Matrix& a) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
        const double nrm = column_norm(a, c);
        if (nrm == 0.0) continue;
        for (std::size_t r = 0; r < a.rows(); ++r) a(r, c) /= nrm;
    }
}

/// Inner product of column i of a with column j of b.
inline double column_dot(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, i) * b(r, j);
    return s;
}

}  // namespace incdl
