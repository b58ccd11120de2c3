#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "skim/matrix.hpp"

// Calibration statistics and the four reconstruction objectives. For a layer
// y = W x the layer-wise error of a row is r (X X^T) r^T with r = w - w^q
// (L-full), and the sensitivity-based error is r (g^T g) r^T with g the
// gradient of the final loss w.r.t. the row (S-full). Their diagonal
// restrictions are L-diag and S-diag. X X^T and the squared gradients are
// averaged over the calibration samples.

namespace skim {

struct CalibSample {
    Matrix X;   // m x k, layer input
    Matrix Gy;  // n x k, gradient of the final loss w.r.t. the layer output
};

struct Sensitivity {
    Matrix G;  // n x m, mean squared per-element weight gradient
};

struct HessianProxy {
    Matrix H;                   // m x m, mean X X^T
    std::vector<double> diagH;  // diagonal of H
};

// Per-row full Fisher matrices. Quadratic in m, so gated to desk scale.
struct RowFisherFull {
    std::vector<Matrix> F;  // n matrices, each m x m
};

namespace detail {

inline void check_samples(const std::vector<CalibSample>& samples) {
    require(!samples.empty(), "calibration: empty sample list");
    const auto& first = samples.front();
    require(first.X.cols == first.Gy.cols, "calibration: X and Gy column counts differ");
    for (const auto& s : samples) {
        require(s.X.rows == first.X.rows && s.Gy.rows == first.Gy.rows &&
                    s.X.cols == s.Gy.cols,
                "calibration: sample shapes are inconsistent");
    }
}

}  // namespace detail

// G_ij = mean_d of ((Gy_d) (X_d)^T)_ij^2, i.e. the squared row gradient
// g_w = g_y X^T averaged over samples.
inline Sensitivity accumulate_sensitivity(const std::vector<CalibSample>& samples) {
    detail::check_samples(samples);
    const std::size_t n = samples.front().Gy.rows;
    const std::size_t m = samples.front().X.rows;
    Matrix G(n, m, 0.0, "G");
    for (const auto& s : samples) {
        const Matrix gw = matmul_bt(s.Gy, s.X);  // n x m
        for (std::size_t i = 0; i < n * m; ++i) G.elems[i] += gw.elems[i] * gw.elems[i];
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (double& v : G.elems) v *= inv;
    return {std::move(G)};
}

inline HessianProxy accumulate_hessian_proxy(const std::vector<CalibSample>& samples) {
    detail::check_samples(samples);
    const std::size_t m = samples.front().X.rows;
    Matrix H(m, m, 0.0, "H");
    for (const auto& s : samples) {
        const Matrix xxt = matmul_bt(s.X, s.X);
        for (std::size_t i = 0; i < m * m; ++i) H.elems[i] += xxt.elems[i];
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (double& v : H.elems) v *= inv;
    std::vector<double> diag(m);
    for (std::size_t j = 0; j < m; ++j) diag[j] = H.at(j, j);
    return {std::move(H), std::move(diag)};
}

inline RowFisherFull accumulate_row_fisher_full(const std::vector<CalibSample>& samples) {
    detail::check_samples(samples);
    const std::size_t n = samples.front().Gy.rows;
    const std::size_t m = samples.front().X.rows;
    if (n * m * m > (std::size_t{1} << 26)) {
        throw std::invalid_argument(
            "accumulate_row_fisher_full: n*m^2 exceeds the desk-scale budget (2^26); "
            "use the diagonal form instead");
    }
    RowFisherFull out;
    out.F.assign(n, Matrix(m, m));
    for (const auto& s : samples) {
        const Matrix gw = matmul_bt(s.Gy, s.X);  // n x m
        for (std::size_t i = 0; i < n; ++i) {
            auto g = gw.row(i);
            Matrix& F = out.F[i];
            for (std::size_t a = 0; a < m; ++a) {
                for (std::size_t b = 0; b < m; ++b) F.at(a, b) += g[a] * g[b];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (auto& F : out.F) {
        for (double& v : F.elems) v *= inv;
    }
    return out;
}

namespace detail {

// Clamp tiny negative quadratic forms (PSD in exact arithmetic) to zero;
// anything below the slack means the weighting matrix is broken.
inline double clamp_quadratic(double q, double scale) {
    const double slack = 1e-9 * (1.0 + std::abs(scale));
    if (q < -slack) {
        throw std::runtime_error("quadratic form is negative beyond numerical slack; "
                                 "weighting matrix is not PSD");
    }
    return q < 0.0 ? 0.0 : q;
}

}  // namespace detail

// r H r^T with r = w - wq.
inline double err_l_full(std::span<const double> w, std::span<const double> wq,
                         const Matrix& H) {
    const std::size_t m = w.size();
    detail::require(wq.size() == m && H.rows == m && H.cols == m,
                    "err_l_full: shape mismatch");
    std::vector<double> r(m);
    for (std::size_t j = 0; j < m; ++j) r[j] = w[j] - wq[j];
    double q = 0.0;
    double diag_scale = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
        if (r[a] == 0.0) continue;
        double hr = 0.0;
        for (std::size_t b = 0; b < m; ++b) hr += H.at(a, b) * r[b];
        q += r[a] * hr;
        diag_scale += r[a] * r[a] * std::abs(H.at(a, a));
    }
    return detail::clamp_quadratic(q, diag_scale);
}

inline double err_l_full(std::span<const double> w, std::span<const double> wq,
                         const HessianProxy& H) {
    return err_l_full(w, wq, H.H);
}

inline double err_l_diag(std::span<const double> w, std::span<const double> wq,
                         std::span<const double> diagH) {
    const std::size_t m = w.size();
    detail::require(wq.size() == m && diagH.size() == m, "err_l_diag: shape mismatch");
    double q = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double r = w[j] - wq[j];
        q += diagH[j] * r * r;
    }
    return detail::clamp_quadratic(q, q);
}

inline double err_s_diag(std::span<const double> w, std::span<const double> wq,
                         std::span<const double> g_row) {
    return err_l_diag(w, wq, g_row);
}

inline double err_s_full(std::span<const double> w, std::span<const double> wq,
                         const Matrix& F_i) {
    return err_l_full(w, wq, F_i);
}

// Sum of per-row L-full errors; equals ||(W - Wq) X||_F^2 when H is a
// single-sample X X^T.
inline double err_matrix_l_full(const Matrix& W, const Matrix& Wq, const Matrix& H) {
    detail::require(W.same_shape(Wq), "err_matrix_l_full: W/Wq shape mismatch");
    detail::require(H.rows == W.cols && H.cols == W.cols,
                    "err_matrix_l_full: H shape mismatch");
    std::vector<double> per_row(W.rows);
    for (std::size_t i = 0; i < W.rows; ++i) {
        per_row[i] = err_l_full(W.row(i), Wq.row(i), H);
    }
    return pairwise_sum(per_row);
}

inline double err_matrix_l_full(const Matrix& W, const Matrix& Wq, const HessianProxy& H) {
    return err_matrix_l_full(W, Wq, H.H);
}

}  // namespace skim
