#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "skim/allocation.hpp"
#include "skim/calibration.hpp"
#include "skim/kmeans1d.hpp"
#include "skim/matrix.hpp"
#include "skim/packing.hpp"
#include "skim/random.hpp"
#include "skim/scaling.hpp"

// Full per-layer quantization: record per-row/per-bit errors, allocate bits
// under the fractional budget, cluster, then train the scaling vector.
// Clustering weights are S-diag (sensitivity); the recorded error matrix and
// the scaling loss use the L-full form.

namespace skim {

struct PipelineConfig {
    double target_bit = 3.0;
    int b_min = 2;
    int b_max = 4;
    bool mixed_precision = true;
    AllocInit alloc_init = AllocInit::all_min;
    bool scaling = true;
    int iterations = 1;
    std::uint64_t seed = 0;
    int restarts = 3;
    bool oracle = false;  // also run the DP allocation oracle and report the gap
    // Preset for models that overfit mixed precision: disable it at integral
    // targets, initialize the greedy loop at floor(bit) otherwise.
    bool opt_style = false;
    AdamConfig adam;
    std::string layer_name = "layer";

    KmeansConfig kmeans() const { return {restarts, seed, 100}; }
};

struct OracleGap {
    double greedy_error = 0.0;
    double dp_error = 0.0;
    double rel_gap = 0.0;  // (greedy - dp) / max(dp, eps)
    double greedy_avg_bits = 0.0;
    double dp_avg_bits = 0.0;
};

struct QuantReport {
    std::string layer;
    std::size_t n = 0;
    std::size_t m = 0;
    double target_bit = 0.0;
    int b_min = 0;
    int b_max = 0;
    bool mixed = false;
    bool scaling = false;
    std::uint64_t seed = 0;
    int restarts = 0;
    int iterations = 0;
    double loss_alpha_one = 0.0;  // grouping-only loss at alpha = 1
    double loss_final = 0.0;      // after scaling (keep-best)
    double loss_packed = 0.0;     // after f16/f32 storage rounding
    std::vector<long long> bit_histogram;  // counts for b_min..b_max
    std::vector<int> row_bits;             // per-row allocated bits
    std::vector<double> row_errors;        // per-row L-full at the final layer
    double avg_bits = 0.0;
    bool saturated = false;
    SizeReport size;
    std::optional<OracleGap> oracle;
    double wall_ms = 0.0;
    std::vector<TracePoint> trace;  // alpha training trace (scaling runs only)
};

namespace detail {

inline bool is_integral_bit(double bit) {
    return std::abs(bit - std::nearbyint(bit)) <= 1e-9 * std::max(1.0, std::abs(bit));
}

inline PipelineConfig resolve_preset(PipelineConfig cfg) {
    if (cfg.opt_style) {
        if (is_integral_bit(cfg.target_bit)) {
            cfg.mixed_precision = false;
        } else {
            cfg.alloc_init = AllocInit::floor_bit;
        }
    }
    return cfg;
}

inline void pad_codebooks(Codebooks& cb, const BitAllocation& alloc) {
    for (std::size_t i = 0; i < cb.rows.size(); ++i) {
        auto& row = cb.rows[i];
        const std::size_t want = std::size_t{1} << alloc.bits[i];
        require(row.size() <= want && !row.empty(),
                "pad_codebooks: codebook larger than 2^bits");
        while (row.size() < want) row.push_back(row.back());
    }
}

}  // namespace detail

inline void validate_config(const PipelineConfig& cfg) {
    detail::require(1 <= cfg.b_min && cfg.b_min <= cfg.b_max && cfg.b_max <= 8,
                    "config: bits must satisfy 1 <= b_min <= b_max <= 8");
    if (cfg.target_bit < cfg.b_min || cfg.target_bit > cfg.b_max) {
        throw std::invalid_argument(
            "config: target bit " + std::to_string(cfg.target_bit) +
            " must lie in [b_min, b_max] = [" + std::to_string(cfg.b_min) + ", " +
            std::to_string(cfg.b_max) + "]");
    }
    if (!cfg.mixed_precision && !cfg.opt_style &&
        !detail::is_integral_bit(cfg.target_bit)) {
        throw std::invalid_argument(
            "config: mixed precision is off but the target bit is fractional");
    }
    detail::require(cfg.iterations >= 1, "config: iterations must be >= 1");
    detail::require(cfg.restarts >= 1, "config: restarts must be >= 1");
}

// End-to-end quantization of one layer. A pre-recorded error matrix can be
// passed in (it is seed/config-dependent, so callers must reuse it only with
// the configuration that produced it).
inline std::pair<QuantizedLayer, QuantReport> quantize_layer(
    const Matrix& W, const Sensitivity& G, const HessianProxy& H,
    const PipelineConfig& config, const ErrorMatrix* cached_errors = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    const PipelineConfig cfg = detail::resolve_preset(config);
    validate_config(cfg);
    detail::require(W.same_shape(G.G), "quantize_layer: W/G shape mismatch");
    detail::require(H.H.rows == W.cols, "quantize_layer: H shape mismatch");

    const KmeansConfig kcfg = cfg.kmeans();

    // Bit allocation.
    std::optional<ErrorMatrix> owned_errors;
    const ErrorMatrix* E = cached_errors;
    const bool need_errors = cfg.mixed_precision || cfg.oracle;
    if (need_errors && E == nullptr) {
        owned_errors = record_error_matrix(W, G, H, cfg.b_min, cfg.b_max, kcfg);
        E = &*owned_errors;
    }
    if (E != nullptr) {
        detail::require(E->n == W.rows && E->b_min == cfg.b_min && E->b_max == cfg.b_max,
                        "quantize_layer: cached error matrix does not match the config");
    }

    BitAllocation alloc;
    if (cfg.mixed_precision) {
        alloc = allocate_greedy(*E, cfg.target_bit, cfg.alloc_init);
    } else {
        alloc.b_min = cfg.b_min;
        alloc.b_max = cfg.b_max;
        alloc.target = cfg.target_bit;
        alloc.bits.assign(W.rows,
                          static_cast<int>(std::nearbyint(cfg.target_bit)));
    }

    QuantReport report;
    report.layer = cfg.layer_name;
    report.n = W.rows;
    report.m = W.cols;
    report.target_bit = cfg.target_bit;
    report.b_min = cfg.b_min;
    report.b_max = cfg.b_max;
    report.mixed = cfg.mixed_precision;
    report.scaling = cfg.scaling;
    report.seed = cfg.seed;
    report.restarts = cfg.restarts;
    report.iterations = cfg.iterations;
    report.saturated = alloc.saturated;
    report.avg_bits = alloc.average_bits();

    if (cfg.oracle) {
        const BitAllocation dp = allocate_dp_oracle(*E, cfg.target_bit);
        OracleGap gap;
        gap.greedy_error = allocation_error(*E, alloc);
        gap.dp_error = allocation_error(*E, dp);
        gap.rel_gap = (gap.greedy_error - gap.dp_error) / std::max(gap.dp_error, 1e-300);
        gap.greedy_avg_bits = alloc.average_bits();
        gap.dp_avg_bits = dp.average_bits();
        report.oracle = gap;
    }

    // Clustering and scaling.
    LabelMatrix labels;
    Codebooks codebooks;
    ScalingVector alpha = ScalingVector::ones(W.cols);
    if (cfg.scaling) {
        IterativeResult it = iterative_optimize(W, G, H, alloc, cfg.iterations, kcfg, cfg.adam);
        labels = std::move(it.labels);
        codebooks = std::move(it.codebooks);
        alpha = std::move(it.alpha);
        report.loss_alpha_one = it.initial_loss;
        report.loss_final = it.best_loss;
    } else {
        labels = compute_labels(W, alpha, G, alloc, kcfg);
        codebooks = calc_centroids(W, alpha, labels, G);
        const Matrix wq = reconstruct_weights(codebooks, labels, alpha);
        report.loss_alpha_one = err_matrix_l_full(W, wq, H.H);
        report.loss_final = report.loss_alpha_one;
    }

    detail::pad_codebooks(codebooks, alloc);

    QuantizedLayer layer;
    layer.n = W.rows;
    layer.m = W.cols;
    layer.bits = alloc;
    layer.labels = std::move(labels);
    layer.codebooks = std::move(codebooks);
    layer.alpha = alpha.alpha;
    layer.meta["layer"] = cfg.layer_name;
    layer.meta["target_bit"] = std::to_string(cfg.target_bit);

    report.bit_histogram.assign(static_cast<std::size_t>(cfg.b_max - cfg.b_min + 1), 0);
    for (int b : layer.bits.bits) report.bit_histogram[static_cast<std::size_t>(b - cfg.b_min)]++;
    report.row_bits = layer.bits.bits;

    const Matrix wq_full =
        reconstruct_weights(layer.codebooks, layer.labels, ScalingVector{layer.alpha});
    report.row_errors.resize(W.rows);
    for (std::size_t i = 0; i < W.rows; ++i) {
        report.row_errors[i] = err_l_full(W.row(i), wq_full.row(i), H.H);
    }
    report.loss_packed = err_matrix_l_full(W, dequantize(layer), H.H);
    report.size = size_report(layer);

    report.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return {std::move(layer), std::move(report)};
}

// Synthetic desk-scale fixture: Gaussian weights with log-normal per-row
// scales (channel disparity) and optionally a few columns scaled up as
// outliers; calibration samples are Gaussian.
struct FixtureSpec {
    std::size_t n = 64;
    std::size_t m = 128;
    std::size_t k = 32;
    std::size_t num_samples = 4;
    double row_sigma = 1.0;
    std::size_t outlier_cols = 0;
    double outlier_scale = 1.0;
};

struct Fixture {
    Matrix W;
    std::vector<CalibSample> samples;
};

inline Fixture generate_fixture(std::uint64_t seed, const FixtureSpec& spec) {
    detail::require(spec.n >= 1 && spec.m >= 1 && spec.k >= 1 && spec.num_samples >= 1,
                    "generate_fixture: empty dimensions");
    detail::require(spec.outlier_cols <= spec.m,
                    "generate_fixture: more outlier columns than columns");
    Rng rng(mix64(seed));

    Fixture fx;
    fx.W = Matrix(spec.n, spec.m, 0.0, "W");
    for (std::size_t i = 0; i < spec.n; ++i) {
        const double scale = std::exp(spec.row_sigma * rng.normal());
        for (std::size_t j = 0; j < spec.m; ++j) {
            fx.W.at(i, j) = scale * rng.normal();
        }
    }

    if (spec.outlier_cols > 0 && spec.outlier_scale != 1.0) {
        // Partial Fisher-Yates pick of distinct outlier columns.
        std::vector<std::size_t> cols(spec.m);
        std::iota(cols.begin(), cols.end(), 0);
        for (std::size_t t = 0; t < spec.outlier_cols; ++t) {
            const std::size_t pick = t + rng.index(spec.m - t);
            std::swap(cols[t], cols[pick]);
        }
        for (std::size_t t = 0; t < spec.outlier_cols; ++t) {
            for (std::size_t i = 0; i < spec.n; ++i) {
                fx.W.at(i, cols[t]) *= spec.outlier_scale;
            }
        }
    }

    for (std::size_t d = 0; d < spec.num_samples; ++d) {
        CalibSample s;
        s.X = Matrix(spec.m, spec.k, 0.0, "X." + std::to_string(d));
        for (double& v : s.X.elems) v = rng.normal();
        s.Gy = Matrix(spec.n, spec.k, 0.0, "Gy." + std::to_string(d));
        for (double& v : s.Gy.elems) v = rng.normal();
        fx.samples.push_back(std::move(s));
    }
    return fx;
}

}  // namespace skim
