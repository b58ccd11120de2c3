#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace skim {

// Dense row-major matrix of doubles. All compute in this library is f64;
// narrower types exist only at the storage boundary.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> elems;  // rows * cols, row-major
    std::string name;

    Matrix() = default;

    Matrix(std::size_t r, std::size_t c, double fill = 0.0, std::string n = "")
        : rows(r), cols(c), elems(r * c, fill), name(std::move(n)) {}

    static Matrix from(std::size_t r, std::size_t c, std::vector<double> data,
                       std::string n = "") {
        if (data.size() != r * c) {
            throw std::invalid_argument("Matrix::from: data size " +
                                        std::to_string(data.size()) + " != " +
                                        std::to_string(r) + "x" + std::to_string(c));
        }
        Matrix m;
        m.rows = r;
        m.cols = c;
        m.elems = std::move(data);
        m.name = std::move(n);
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    double& at(std::size_t i, std::size_t j) { return elems[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return elems[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {elems.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const {
        return {elems.data() + i * cols, cols};
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : elems) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

inline bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.elems == b.elems;
}

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void require_finite(const Matrix& m, const std::string& who) {
    if (!m.all_finite()) {
        throw std::invalid_argument(who + ": tensor '" + m.name +
                                    "' contains a non-finite element");
    }
}

}  // namespace detail

// a (r x k) * b (k x c)
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    detail::require(a.cols == b.rows, "matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    return out;
}

// a (r x k) * b^T (c x k)
inline Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    detail::require(a.cols == b.cols, "matmul_bt: inner dimensions differ");
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.rows; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(j, k);
            out.at(i, j) = s;
        }
    }
    return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    detail::require(a.size() == b.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double frobenius_sq(const Matrix& m) {
    double s = 0.0;
    for (double v : m.elems) s += v * v;
    return s;
}

// Fixed-order pairwise reduction; the split points depend only on the length,
// so the result is independent of thread count.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

}  // namespace skim
