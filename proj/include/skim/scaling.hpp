#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "skim/allocation.hpp"
#include "skim/calibration.hpp"
#include "skim/kmeans1d.hpp"
#include "skim/matrix.hpp"
#include "skim/parallel.hpp"

// Trainable column scaling: W^q = replace(c, L) * alpha where the labels L are
// computed on W * alpha^{-1} and held fixed, which makes the L-full loss a
// smooth function of alpha. calc_centroids and the final multiply are
// differentiated analytically; Adam with keep-best does the rest.

namespace skim {

inline constexpr double kAlphaMin = 1e-4;
inline constexpr double kAlphaMax = 1e4;

struct ScalingVector {
    std::vector<double> alpha;

    static ScalingVector ones(std::size_t m) { return {std::vector<double>(m, 1.0)}; }

    void clamp() {
        for (double& a : alpha) a = std::clamp(a, kAlphaMin, kAlphaMax);
    }
};

struct LabelMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<int> labels;

    LabelMatrix() = default;
    LabelMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), labels(r * c, 0) {}

    int& at(std::size_t i, std::size_t j) { return labels[i * cols + j]; }
    int at(std::size_t i, std::size_t j) const { return labels[i * cols + j]; }
    std::span<const int> row(std::size_t i) const { return {labels.data() + i * cols, cols}; }
};

inline bool operator==(const LabelMatrix& a, const LabelMatrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.labels == b.labels;
}

// Per-row centroid lists indexed by label value.
struct Codebooks {
    std::vector<std::vector<double>> rows;
};

struct AdamConfig {
    double lr = 0.01;
    double decay = 0.5;
    int decay_every = 40;
    int max_steps = 120;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // stop after this many consecutive steps with < 1e-10 relative improvement
    int patience = 10;
    double min_rel_improvement = 1e-10;
};

namespace detail {

inline void check_alpha(const ScalingVector& alpha, std::size_t m) {
    require(alpha.alpha.size() == m, "scaling: alpha length mismatch");
    for (double a : alpha.alpha) {
        require(std::isfinite(a) && a > 0.0, "scaling: alpha entries must be positive");
    }
}

}  // namespace detail

// Row-wise clustering of W * alpha^{-1} with sensitivity weights; row i uses
// 2^{bits[i]} centroids and a per-row derived seed.
inline LabelMatrix compute_labels(const Matrix& W, const ScalingVector& alpha,
                                  const Sensitivity& G, const BitAllocation& alloc,
                                  const KmeansConfig& cfg) {
    detail::require(W.same_shape(G.G), "compute_labels: W/G shape mismatch");
    detail::require(alloc.bits.size() == W.rows, "compute_labels: allocation size mismatch");
    detail::check_alpha(alpha, W.cols);

    LabelMatrix out(W.rows, W.cols);
    parallel_for(W.rows, [&](std::size_t i) {
        std::vector<double> scaled(W.cols);
        for (std::size_t j = 0; j < W.cols; ++j) scaled[j] = W.at(i, j) / alpha.alpha[j];
        const ClusterResult res =
            kmeans_lloyd(scaled, G.G.row(i), 1 << alloc.bits[i],
                         derive_seed(cfg.seed, i), cfg.restarts, cfg.max_sweeps);
        for (std::size_t j = 0; j < W.cols; ++j) out.at(i, j) = res.labels[j];
    });
    return out;
}

// Sensitivity-weighted means of the scaled values, per label class. The
// weight floor guarantees every class has positive total weight.
inline Codebooks calc_centroids(const Matrix& W, const ScalingVector& alpha,
                                const LabelMatrix& labels, const Sensitivity& G) {
    detail::require(W.same_shape(G.G), "calc_centroids: W/G shape mismatch");
    detail::require(labels.rows == W.rows && labels.cols == W.cols,
                    "calc_centroids: label shape mismatch");
    detail::check_alpha(alpha, W.cols);

    Codebooks out;
    out.rows.resize(W.rows);
    for (std::size_t i = 0; i < W.rows; ++i) {
        int k = 0;
        for (std::size_t j = 0; j < W.cols; ++j) {
            detail::require(labels.at(i, j) >= 0, "calc_centroids: negative label");
            k = std::max(k, labels.at(i, j) + 1);
        }
        const std::vector<double> fw = floor_weights(G.G.row(i));
        std::vector<double> num(k, 0.0), den(k, 0.0);
        for (std::size_t j = 0; j < W.cols; ++j) {
            const int l = labels.at(i, j);
            num[l] += fw[j] * W.at(i, j) / alpha.alpha[j];
            den[l] += fw[j];
        }
        auto& row = out.rows[i];
        row.resize(k);
        for (int l = 0; l < k; ++l) {
            if (den[l] <= 0.0) {
                throw std::logic_error("calc_centroids: label class with zero weight");
            }
            row[l] = num[l] / den[l];
        }
    }
    return out;
}

inline Matrix reconstruct_weights(const Codebooks& codebooks, const LabelMatrix& labels,
                                  const ScalingVector& alpha) {
    detail::require(codebooks.rows.size() == labels.rows,
                    "reconstruct_weights: row count mismatch");
    detail::check_alpha(alpha, labels.cols);
    Matrix out(labels.rows, labels.cols, 0.0, "Wq");
    for (std::size_t i = 0; i < labels.rows; ++i) {
        const auto& row = codebooks.rows[i];
        for (std::size_t j = 0; j < labels.cols; ++j) {
            const int l = labels.at(i, j);
            detail::require(l >= 0 && l < static_cast<int>(row.size()),
                            "reconstruct_weights: label out of codebook range");
            out.at(i, j) = row[l] * alpha.alpha[j];
        }
    }
    return out;
}

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

// L-full loss of the alpha-dependent reconstruction with labels fixed, plus
// its exact gradient. With r_i = w_i - w^q_i(alpha), D = -2 H r_i and
// A_l = sum_{j in l} D_j alpha_j:
//   d loss / d alpha_p =
//     sum_i [ D_ip c_{i,L_ip} - fw_ip W_ip / (alpha_p^2 den_{i,L_ip}) * A_{i,L_ip} ].
inline LossGrad loss_and_grad(const Matrix& W, const LabelMatrix& labels,
                              const Sensitivity& G, const HessianProxy& H,
                              const ScalingVector& alpha) {
    const std::size_t n = W.rows;
    const std::size_t m = W.cols;
    detail::require(W.same_shape(G.G), "loss_and_grad: W/G shape mismatch");
    detail::require(labels.rows == n && labels.cols == m,
                    "loss_and_grad: label shape mismatch");
    detail::require(H.H.rows == m && H.H.cols == m, "loss_and_grad: H shape mismatch");
    detail::check_alpha(alpha, m);

    std::vector<double> row_loss(n, 0.0);
    std::vector<double> row_grad(n * m, 0.0);  // per-row contributions

    parallel_for(n, [&](std::size_t i) {
        int k = 0;
        for (std::size_t j = 0; j < m; ++j) k = std::max(k, labels.at(i, j) + 1);
        const std::vector<double> fw = floor_weights(G.G.row(i));

        std::vector<double> num(k, 0.0), den(k, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            const int l = labels.at(i, j);
            num[l] += fw[j] * W.at(i, j) / alpha.alpha[j];
            den[l] += fw[j];
        }
        std::vector<double> c(k);
        for (int l = 0; l < k; ++l) c[l] = num[l] / den[l];

        std::vector<double> r(m);
        for (std::size_t j = 0; j < m; ++j) {
            r[j] = W.at(i, j) - c[labels.at(i, j)] * alpha.alpha[j];
        }
        std::vector<double> hr(m, 0.0);
        for (std::size_t a = 0; a < m; ++a) {
            double s = 0.0;
            for (std::size_t b = 0; b < m; ++b) s += H.H.at(a, b) * r[b];
            hr[a] = s;
        }
        row_loss[i] = dot(r, hr);

        std::vector<double> A(k, 0.0);  // sum of D_j alpha_j per class
        for (std::size_t j = 0; j < m; ++j) {
            A[labels.at(i, j)] += -2.0 * hr[j] * alpha.alpha[j];
        }
        double* g = row_grad.data() + i * m;
        for (std::size_t p = 0; p < m; ++p) {
            const int l = labels.at(i, p);
            const double ap = alpha.alpha[p];
            g[p] = -2.0 * hr[p] * c[l] - fw[p] * W.at(i, p) / (ap * ap * den[l]) * A[l];
        }
    });

    LossGrad out;
    out.loss = pairwise_sum(row_loss);
    out.grad.assign(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* g = row_grad.data() + i * m;
        for (std::size_t p = 0; p < m; ++p) out.grad[p] += g[p];
    }
    if (!std::isfinite(out.loss)) {
        throw std::runtime_error("loss_and_grad: non-finite loss (alpha at clamp box?)");
    }
    return out;
}

struct TracePoint {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct OptimizeResult {
    ScalingVector alpha;
    double best_loss = 0.0;
    std::vector<TracePoint> trace;
};

// Adam on alpha with the step-decay schedule, clamping into the box after
// each update and returning the best-loss alpha seen (keep-best).
inline OptimizeResult optimize_alpha(const Matrix& W, const LabelMatrix& labels,
                                     const Sensitivity& G, const HessianProxy& H,
                                     const AdamConfig& cfg,
                                     const ScalingVector* start = nullptr) {
    const std::size_t m = W.cols;
    ScalingVector alpha = start ? *start : ScalingVector::ones(m);
    alpha.clamp();

    std::vector<double> mom(m, 0.0), vel(m, 0.0);
    LossGrad lg = loss_and_grad(W, labels, G, H, alpha);

    OptimizeResult out;
    out.alpha = alpha;
    out.best_loss = lg.loss;
    out.trace.push_back({0, lg.loss, cfg.lr});

    int stall = 0;
    for (int t = 1; t <= cfg.max_steps; ++t) {
        const double lr_t =
            cfg.lr * std::pow(cfg.decay, (t - 1) / std::max(cfg.decay_every, 1));
        const double bc1 = 1.0 - std::pow(cfg.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t p = 0; p < m; ++p) {
            const double g = lg.grad[p];
            mom[p] = cfg.beta1 * mom[p] + (1.0 - cfg.beta1) * g;
            vel[p] = cfg.beta2 * vel[p] + (1.0 - cfg.beta2) * g * g;
            const double mhat = mom[p] / bc1;
            const double vhat = vel[p] / bc2;
            alpha.alpha[p] -= lr_t * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        alpha.clamp();

        lg = loss_and_grad(W, labels, G, H, alpha);
        out.trace.push_back({t, lg.loss, lr_t});

        const double improvement =
            (out.best_loss - lg.loss) / std::max(out.best_loss, 1e-300);
        if (lg.loss < out.best_loss) {
            out.best_loss = lg.loss;
            out.alpha = alpha;
        }
        if (improvement > cfg.min_rel_improvement) {
            stall = 0;
        } else if (++stall >= cfg.patience) {
            break;
        }
    }
    return out;
}

struct IterativeResult {
    LabelMatrix labels;
    Codebooks codebooks;
    ScalingVector alpha;
    double best_loss = 0.0;
    double initial_loss = 0.0;          // loss at alpha = 1 with iteration-1 labels
    std::vector<double> iter_best;      // best loss after each outer iteration
};

// Outer loop of the iterative strategy: recompute labels at the current
// alpha, then train alpha with those labels fixed. The best (labels, alpha)
// pair across iterations is returned, so the recorded per-iteration losses
// never increase.
inline IterativeResult iterative_optimize(const Matrix& W, const Sensitivity& G,
                                          const HessianProxy& H,
                                          const BitAllocation& alloc, int iterations,
                                          const KmeansConfig& kcfg, const AdamConfig& acfg) {
    detail::require(iterations >= 1, "iterative_optimize: iterations must be >= 1");

    IterativeResult out;
    out.best_loss = std::numeric_limits<double>::infinity();
    ScalingVector alpha = ScalingVector::ones(W.cols);

    for (int it = 0; it < iterations; ++it) {
        LabelMatrix labels = compute_labels(W, alpha, G, alloc, kcfg);
        OptimizeResult opt = optimize_alpha(W, labels, G, H, acfg, &alpha);
        if (it == 0) out.initial_loss = opt.trace.front().loss;
        if (opt.best_loss < out.best_loss) {
            out.best_loss = opt.best_loss;
            out.labels = std::move(labels);
            out.alpha = opt.alpha;
        }
        out.iter_best.push_back(out.best_loss);
        alpha = opt.alpha;
    }
    out.codebooks = calc_centroids(W, out.alpha, out.labels, G);
    return out;
}

}  // namespace skim
