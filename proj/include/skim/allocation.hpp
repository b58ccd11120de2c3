#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "skim/calibration.hpp"
#include "skim/kmeans1d.hpp"
#include "skim/matrix.hpp"
#include "skim/parallel.hpp"

// Channel-wise bit allocation under a fractional average-bit budget. The
// error matrix E[i][b] is recorded once (L-full error of row i clustered at
// 2^b centroids) and can then be reused for any target bit.

namespace skim {

struct ErrorMatrix {
    std::size_t n = 0;
    int b_min = 0;
    int b_max = 0;
    std::vector<double> E;  // n x (b_max - b_min + 1), row-major

    int span() const { return b_max - b_min + 1; }
    double at(std::size_t i, int bits) const {
        return E[i * static_cast<std::size_t>(span()) + static_cast<std::size_t>(bits - b_min)];
    }
    double& at(std::size_t i, int bits) {
        return E[i * static_cast<std::size_t>(span()) + static_cast<std::size_t>(bits - b_min)];
    }
};

struct BitAllocation {
    std::vector<int> bits;  // per-row bit widths in [b_min, b_max]
    double target = 0.0;    // requested average bits
    int b_min = 0;
    int b_max = 0;
    bool saturated = false;  // every row hit b_max before the budget crossed

    long long total_bits() const {
        long long s = 0;
        for (int b : bits) s += b;
        return s;
    }
    double average_bits() const {
        return static_cast<double>(total_bits()) / static_cast<double>(bits.size());
    }
};

enum class AllocInit { all_min, floor_bit };

namespace detail {

// n*bit snapped to an integer when it is one up to fp noise (10 * 3.2 must
// count as 32, not 32.000000000000004).
inline long long snap_or_ceil(std::size_t n, double bit) {
    const double t = static_cast<double>(n) * bit;
    const double r = std::nearbyint(t);
    if (std::abs(t - r) <= 1e-9 * std::max(1.0, std::abs(t))) return static_cast<long long>(r);
    return static_cast<long long>(std::ceil(t));
}

inline long long snap_or_floor(std::size_t n, double bit) {
    const double t = static_cast<double>(n) * bit;
    const double r = std::nearbyint(t);
    if (std::abs(t - r) <= 1e-9 * std::max(1.0, std::abs(t))) return static_cast<long long>(r);
    return static_cast<long long>(std::floor(t));
}

inline void check_budget(const ErrorMatrix& E, double bit) {
    require(E.n >= 1 && E.b_min >= 1 && E.b_min <= E.b_max, "allocation: bad error matrix");
    if (bit < E.b_min || bit > E.b_max) {
        throw std::invalid_argument("allocation: target bit " + std::to_string(bit) +
                                    " outside [" + std::to_string(E.b_min) + ", " +
                                    std::to_string(E.b_max) + "]");
    }
}

}  // namespace detail

// E[i][b] = L-full error of row i clustered at 2^b centroids with sensitivity
// weights. Rows run in parallel with per-row derived seeds, so the result is
// independent of scheduling.
inline ErrorMatrix record_error_matrix(const Matrix& W, const Sensitivity& G,
                                       const HessianProxy& H, int b_min, int b_max,
                                       const KmeansConfig& cfg) {
    detail::require(1 <= b_min && b_min <= b_max && b_max <= 8,
                    "record_error_matrix: bits must satisfy 1 <= b_min <= b_max <= 8");
    detail::require(W.same_shape(G.G), "record_error_matrix: W/G shape mismatch");
    detail::require(H.H.rows == W.cols && H.H.cols == W.cols,
                    "record_error_matrix: H shape mismatch");

    ErrorMatrix E;
    E.n = W.rows;
    E.b_min = b_min;
    E.b_max = b_max;
    E.E.assign(E.n * static_cast<std::size_t>(E.span()), 0.0);

    parallel_for(W.rows, [&](std::size_t i) {
        const auto w = W.row(i);
        const auto g = G.G.row(i);
        const std::uint64_t row_seed = derive_seed(cfg.seed, i);
        for (int b = b_min; b <= b_max; ++b) {
            const ClusterResult res =
                kmeans_lloyd(w, g, 1 << b, row_seed, cfg.restarts, cfg.max_sweeps);
            const std::vector<double> wq = reconstruct_row(res);
            E.at(i, b) = err_l_full(w, wq, H.H);
        }
    });
    return E;
}

// Greedy allocation: repeatedly grant +1 bit to the row with the largest
// marginal error reduction E[i][b] - E[i][b+1] until the total crosses
// n * bit. The budget check runs before each increment, so an already
// satisfied budget performs none.
inline BitAllocation allocate_greedy(const ErrorMatrix& E, double bit,
                                     AllocInit init = AllocInit::all_min) {
    detail::check_budget(E, bit);
    const std::size_t n = E.n;
    const long long target = detail::snap_or_ceil(n, bit);

    BitAllocation alloc;
    alloc.target = bit;
    alloc.b_min = E.b_min;
    alloc.b_max = E.b_max;
    const int start =
        init == AllocInit::floor_bit
            ? std::clamp(static_cast<int>(detail::snap_or_floor(1, bit)), E.b_min, E.b_max)
            : E.b_min;
    alloc.bits.assign(n, start);
    long long total = static_cast<long long>(n) * start;

    struct Gain {
        double gain;
        std::size_t row;
        int from_bits;
    };
    const auto worse = [](const Gain& a, const Gain& b) {
        if (a.gain != b.gain) return a.gain < b.gain;
        return a.row > b.row;  // ties go to the lowest row index
    };
    std::priority_queue<Gain, std::vector<Gain>, decltype(worse)> heap(worse);
    for (std::size_t i = 0; i < n; ++i) {
        if (alloc.bits[i] < E.b_max) {
            heap.push({E.at(i, alloc.bits[i]) - E.at(i, alloc.bits[i] + 1), i,
                       alloc.bits[i]});
        }
    }

    while (total < target) {
        bool granted = false;
        while (!heap.empty()) {
            const Gain top = heap.top();
            heap.pop();
            if (alloc.bits[top.row] != top.from_bits) continue;  // stale entry
            alloc.bits[top.row] += 1;
            total += 1;
            if (alloc.bits[top.row] < E.b_max) {
                heap.push({E.at(top.row, alloc.bits[top.row]) -
                               E.at(top.row, alloc.bits[top.row] + 1),
                           top.row, alloc.bits[top.row]});
            }
            granted = true;
            break;
        }
        if (!granted) {
            alloc.saturated = true;
            break;
        }
    }
    return alloc;
}

// Exact knapsack oracle: minimizes sum_i E[i][b_i] subject to
// sum b_i <= floor(n * bit). Desk scale only.
inline BitAllocation allocate_dp_oracle(const ErrorMatrix& E, double bit) {
    detail::check_budget(E, bit);
    const std::size_t n = E.n;
    const int range = E.b_max - E.b_min;
    if (n * static_cast<std::size_t>(std::max(range, 1)) > (std::size_t{1} << 20)) {
        throw std::invalid_argument("allocate_dp_oracle: exceeds the desk-scale guard");
    }

    const long long cap = detail::snap_or_floor(n, bit);
    const long long spend_cap =
        std::min<long long>(cap - static_cast<long long>(n) * E.b_min,
                            static_cast<long long>(n) * range);
    detail::require(spend_cap >= 0, "allocate_dp_oracle: infeasible budget");
    const std::size_t S = static_cast<std::size_t>(spend_cap);
    if ((n + 1) * (S + 1) > (std::size_t{1} << 26)) {
        throw std::invalid_argument("allocate_dp_oracle: DP table exceeds the scale guard");
    }

    const double inf = std::numeric_limits<double>::infinity();
    // dp[s] = best cost of the rows seen so far with total extra spend <= s.
    std::vector<double> dp(S + 1, 0.0), ndp(S + 1, inf);
    std::vector<std::uint8_t> choice((n) * (S + 1), 0);

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s <= S; ++s) {
            double best = inf;
            std::uint8_t best_x = 0;
            const int xmax = std::min<int>(range, static_cast<int>(s));
            for (int x = 0; x <= xmax; ++x) {
                const double cand = dp[s - static_cast<std::size_t>(x)] +
                                    E.at(i, E.b_min + x);
                if (cand < best) {
                    best = cand;
                    best_x = static_cast<std::uint8_t>(x);
                }
            }
            ndp[s] = best;
            choice[i * (S + 1) + s] = best_x;
        }
        dp.swap(ndp);
        std::fill(ndp.begin(), ndp.end(), inf);
    }

    BitAllocation alloc;
    alloc.target = bit;
    alloc.b_min = E.b_min;
    alloc.b_max = E.b_max;
    alloc.bits.assign(n, E.b_min);
    std::size_t s = S;
    for (std::size_t i = n; i-- > 0;) {
        const int x = choice[i * (S + 1) + s];
        alloc.bits[i] = E.b_min + x;
        s -= static_cast<std::size_t>(x);
    }
    return alloc;
}

inline double allocation_error(const ErrorMatrix& E, const BitAllocation& alloc) {
    detail::require(alloc.bits.size() == E.n, "allocation_error: row count mismatch");
    std::vector<double> per_row(E.n);
    for (std::size_t i = 0; i < E.n; ++i) {
        detail::require(alloc.bits[i] >= E.b_min && alloc.bits[i] <= E.b_max,
                        "allocation_error: bits out of range");
        per_row[i] = E.at(i, alloc.bits[i]);
    }
    return pairwise_sum(per_row);
}

}  // namespace skim
