#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "skim/matrix.hpp"
#include "skim/random.hpp"

// Weighted 1-D k-means over one weight row. kmeans_lloyd is the production
// path: k-means++ seeded Lloyd runs, each refined by an interval-boundary
// polish (optimal 1-D clusters are contiguous in sorted order, so boundaries
// can be re-optimized by coordinate descent and merge/split moves), then
// re-converged by Lloyd so the result is assignment-stable. kmeans_exact_dp
// is the globally optimal oracle for tests.

namespace skim {

struct ClusterResult {
    std::vector<int> labels;        // length m, values in [0, centroids.size())
    std::vector<double> centroids;  // strictly ascending
    double objective = 0.0;         // weighted within-cluster squared error
};

struct KmeansConfig {
    int restarts = 3;
    std::uint64_t seed = 0;
    int max_sweeps = 100;
};

// Zero-sensitivity elements get no pull from the objective but still need a
// centroid, so weights are floored at 1e-12 * max(weights); an all-zero row
// falls back to uniform weights.
inline std::vector<double> floor_weights(std::span<const double> weights) {
    double max_w = 0.0;
    for (double w : weights) {
        detail::require(w >= 0.0, "kmeans1d: negative weight");
        max_w = std::max(max_w, w);
    }
    std::vector<double> fw(weights.begin(), weights.end());
    if (max_w == 0.0) {
        std::fill(fw.begin(), fw.end(), 1.0);
        return fw;
    }
    const double floor = 1e-12 * max_w;
    for (double& w : fw) w = std::max(w, floor);
    return fw;
}

namespace detail {

// Nearest centroid in an ascending list; ties go to the lower index.
inline int nearest_centroid(const std::vector<double>& c, double v) {
    const auto it = std::lower_bound(c.begin(), c.end(), v);
    if (it == c.begin()) return 0;
    if (it == c.end()) return static_cast<int>(c.size()) - 1;
    const auto lo = it - 1;
    return (v - *lo <= *it - v) ? static_cast<int>(lo - c.begin())
                                : static_cast<int>(it - c.begin());
}

inline double assignment_objective(std::span<const double> v,
                                   const std::vector<double>& fw,
                                   const std::vector<int>& labels,
                                   const std::vector<double>& c) {
    double obj = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
        const double d = v[j] - c[labels[j]];
        obj += fw[j] * d * d;
    }
    return obj;
}

// Sorted view with prefix sums; interval costs in extended precision.
struct SortedRow {
    std::size_t m = 0;
    std::vector<std::size_t> order;
    std::vector<long double> sw, swx, swx2;

    SortedRow(std::span<const double> v, const std::vector<double>& fw) : m(v.size()) {
        order.resize(m);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        sw.assign(m + 1, 0.0L);
        swx.assign(m + 1, 0.0L);
        swx2.assign(m + 1, 0.0L);
        for (std::size_t i = 0; i < m; ++i) {
            const long double w = fw[order[i]];
            const long double x = v[order[i]];
            sw[i + 1] = sw[i] + w;
            swx[i + 1] = swx[i] + w * x;
            swx2[i + 1] = swx2[i] + w * x * x;
        }
    }

    // weighted SSE of sorted interval [l, r)
    long double cost(std::size_t l, std::size_t r) const {
        const long double w = sw[r] - sw[l];
        const long double sx = swx[r] - swx[l];
        const long double sx2 = swx2[r] - swx2[l];
        const long double c = sx2 - sx * sx / w;
        return c > 0.0L ? c : 0.0L;
    }

    double mean(std::size_t l, std::size_t r) const {
        return static_cast<double>((swx[r] - swx[l]) / (sw[r] - sw[l]));
    }
};

// Sorts centroids, merges exact duplicates, drops empty clusters, remaps
// labels and recomputes the objective.
inline ClusterResult canonicalize(std::span<const double> v, const std::vector<double>& fw,
                                  std::vector<int> labels, std::vector<double> centroids) {
    const std::size_t k = centroids.size();
    std::vector<int> count(k, 0);
    for (int l : labels) ++count[l];

    std::vector<std::size_t> order;
    for (std::size_t c = 0; c < k; ++c) {
        if (count[c] > 0) order.push_back(c);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return centroids[a] < centroids[b];
    });

    ClusterResult out;
    std::vector<int> remap(k, -1);
    for (std::size_t c : order) {
        if (!out.centroids.empty() && out.centroids.back() == centroids[c]) {
            remap[c] = static_cast<int>(out.centroids.size()) - 1;  // merge duplicate
        } else {
            remap[c] = static_cast<int>(out.centroids.size());
            out.centroids.push_back(centroids[c]);
        }
    }
    out.labels.resize(labels.size());
    for (std::size_t j = 0; j < labels.size(); ++j) out.labels[j] = remap[labels[j]];
    out.objective = assignment_objective(v, fw, out.labels, out.centroids);
    return out;
}

// k-means++ seeding on the weighted D^2 distribution. Stops early once every
// point has zero distance (k exceeds the number of distinct values).
inline std::vector<double> kmeanspp_seed(std::span<const double> v,
                                         const std::vector<double>& fw, int k, Rng& rng) {
    const std::size_t m = v.size();
    std::vector<double> centroids;
    std::vector<double> d2(m, 0.0);
    std::vector<double> cum(m);

    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        total += fw[j];
        cum[j] = total;
    }
    const double u = rng.uniform() * total;
    std::size_t pick = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (pick >= m) pick = m - 1;
    centroids.push_back(v[pick]);
    for (std::size_t j = 0; j < m; ++j) {
        const double d = v[j] - centroids[0];
        d2[j] = d * d;
    }

    while (static_cast<int>(centroids.size()) < k) {
        total = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            total += fw[j] * d2[j];
            cum[j] = total;
        }
        if (total <= 0.0) break;
        const double u2 = rng.uniform() * total;
        pick = std::lower_bound(cum.begin(), cum.end(), u2) - cum.begin();
        if (pick >= m) pick = m - 1;
        const double c = v[pick];
        centroids.push_back(c);
        for (std::size_t j = 0; j < m; ++j) {
            const double d = v[j] - c;
            d2[j] = std::min(d2[j], d * d);
        }
    }
    std::sort(centroids.begin(), centroids.end());
    centroids.erase(std::unique(centroids.begin(), centroids.end()), centroids.end());
    return centroids;
}

// Lloyd iteration to convergence from the given centroids. Asserts the
// assignment objective never increases across sweeps (up to fp noise).
inline void lloyd_iterate(std::span<const double> v, const std::vector<double>& fw,
                          std::vector<double>& centroids, std::vector<int>& labels,
                          int max_sweeps) {
    const std::size_t m = v.size();
    labels.assign(m, 0);
    std::vector<int> prev_labels;
    double prev_obj = std::numeric_limits<double>::infinity();
    // Recomputed means land within an ulp of the old centroid at convergence,
    // so a zero objective can tick up to ~(ulp)^2 * scale; allow that much.
    double noise_floor = 0.0;
    for (std::size_t j = 0; j < m; ++j) noise_floor += fw[j] * v[j] * v[j];
    noise_floor = 1e-18 * (noise_floor + std::numeric_limits<double>::min());

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        for (std::size_t j = 0; j < m; ++j) labels[j] = nearest_centroid(centroids, v[j]);

        const double obj = assignment_objective(v, fw, labels, centroids);
        if (obj > prev_obj * (1.0 + 1e-12) + noise_floor) {
            throw std::logic_error("kmeans_lloyd: objective increased across sweeps");
        }
        prev_obj = obj;
        if (labels == prev_labels) break;
        prev_labels = labels;

        const std::size_t kk = centroids.size();
        std::vector<double> num(kk, 0.0), den(kk, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            num[labels[j]] += fw[j] * v[j];
            den[labels[j]] += fw[j];
        }

        std::vector<std::size_t> empties;
        for (std::size_t c = 0; c < kk; ++c) {
            if (den[c] > 0.0) {
                centroids[c] = num[c] / den[c];
            } else {
                empties.push_back(c);
            }
        }
        if (!empties.empty()) {
            // Reseed each emptied centroid at the point with the largest
            // weighted squared residual (lowest index on ties); a centroid
            // with no positive residual left is dropped.
            std::vector<bool> taken(m, false);
            std::vector<std::size_t> dead;
            for (std::size_t c : empties) {
                double best = 0.0;
                std::size_t best_j = m;
                for (std::size_t j = 0; j < m; ++j) {
                    if (taken[j]) continue;
                    const double d = v[j] - centroids[labels[j]];
                    const double res = fw[j] * d * d;
                    if (res > best) {
                        best = res;
                        best_j = j;
                    }
                }
                if (best_j == m) {
                    dead.push_back(c);
                } else {
                    taken[best_j] = true;
                    centroids[c] = v[best_j];
                }
            }
            for (auto it = dead.rbegin(); it != dead.rend(); ++it) {
                centroids.erase(centroids.begin() + static_cast<std::ptrdiff_t>(*it));
            }
            prev_labels.clear();  // force another sweep
        }
        std::sort(centroids.begin(), centroids.end());
    }
}

// Re-optimizes each interval boundary exactly given its neighbors.
inline void boundaries_coordinate_descent(const SortedRow& sr,
                                          std::vector<std::size_t>& starts) {
    const std::size_t m = sr.m;
    bool improved = true;
    int guard = 100000;
    while (improved && guard-- > 0) {
        improved = false;
        for (std::size_t c = 0; c + 1 < starts.size(); ++c) {
            const std::size_t l = starts[c];
            const std::size_t mid = starts[c + 1];
            const std::size_t r = (c + 2 < starts.size()) ? starts[c + 2] : m;
            long double best = sr.cost(l, mid) + sr.cost(mid, r);
            std::size_t best_t = mid;
            for (std::size_t t = l + 1; t < r; ++t) {
                const long double cand = sr.cost(l, t) + sr.cost(t, r);
                if (cand < best) {
                    best = cand;
                    best_t = t;
                }
            }
            if (best_t != mid) {
                starts[c + 1] = best_t;
                improved = true;
            }
        }
    }
}

// Interval polish: grow up to k intervals while a split pays, then trade the
// cheapest boundary for the most valuable split elsewhere. Escapes Lloyd
// basins where a region holds the wrong number of clusters.
inline void polish_intervals(const SortedRow& sr, int k, std::vector<std::size_t>& starts) {
    const std::size_t m = sr.m;
    const auto interval_end = [&](std::size_t c) {
        return (c + 1 < starts.size()) ? starts[c + 1] : m;
    };
    const auto best_split = [&](std::size_t c, long double& gain, std::size_t& pos) {
        const std::size_t l = starts[c];
        const std::size_t r = interval_end(c);
        gain = 0.0L;
        if (r - l < 2) return false;
        const long double base = sr.cost(l, r);
        bool found = false;
        for (std::size_t t = l + 1; t < r; ++t) {
            const long double g = base - sr.cost(l, t) - sr.cost(t, r);
            if (g > gain) {
                gain = g;
                pos = t;
                found = true;
            }
        }
        return found;
    };

    boundaries_coordinate_descent(sr, starts);

    // Grow while under the budget and a split strictly helps.
    while (static_cast<int>(starts.size()) < k) {
        long double top_gain = 0.0L;
        std::size_t top_c = 0, top_pos = 0;
        for (std::size_t c = 0; c < starts.size(); ++c) {
            long double gain;
            std::size_t pos;
            if (best_split(c, gain, pos) && gain > top_gain) {
                top_gain = gain;
                top_c = c;
                top_pos = pos;
            }
        }
        if (top_gain <= 0.0L) break;
        starts.insert(starts.begin() + static_cast<std::ptrdiff_t>(top_c) + 1, top_pos);
        boundaries_coordinate_descent(sr, starts);
    }

    // Merge/split trades.
    int guard = 200;
    while (starts.size() >= 2 && guard-- > 0) {
        long double min_merge = std::numeric_limits<long double>::max();
        std::size_t merge_b = 0;
        for (std::size_t c = 0; c + 1 < starts.size(); ++c) {
            const std::size_t l = starts[c];
            const std::size_t mid = starts[c + 1];
            const std::size_t r = interval_end(c + 1);
            const long double inc = sr.cost(l, r) - sr.cost(l, mid) - sr.cost(mid, r);
            if (inc < min_merge) {
                min_merge = inc;
                merge_b = c + 1;
            }
        }
        long double top_gain = 0.0L;
        std::size_t top_c = 0, top_pos = 0;
        bool found = false;
        for (std::size_t c = 0; c < starts.size(); ++c) {
            if (c == merge_b - 1 || c == merge_b) continue;  // CD already covers those
            long double gain;
            std::size_t pos;
            if (best_split(c, gain, pos) && gain > top_gain) {
                top_gain = gain;
                top_c = c;
                top_pos = pos;
                found = true;
            }
        }
        if (!found || top_gain <= min_merge) break;
        std::vector<std::size_t> next;
        next.reserve(starts.size());
        for (std::size_t c = 0; c < starts.size(); ++c) {
            if (c == merge_b) continue;
            next.push_back(starts[c]);
            if (c == top_c) next.push_back(top_pos);
        }
        std::sort(next.begin(), next.end());
        starts = next;
        boundaries_coordinate_descent(sr, starts);
    }
}

inline ClusterResult lloyd_run(std::span<const double> v, const std::vector<double>& fw,
                               const SortedRow& sr, int k, std::uint64_t seed,
                               int max_sweeps) {
    Rng rng(seed);
    std::vector<double> centroids = kmeanspp_seed(v, fw, k, rng);
    std::vector<int> labels;
    lloyd_iterate(v, fw, centroids, labels, max_sweeps);

    // Interval boundaries of the converged assignment (non-decreasing labels
    // in sorted order because centroids are ascending).
    std::vector<std::size_t> starts{0};
    for (std::size_t i = 1; i < sr.m; ++i) {
        if (labels[sr.order[i]] != labels[sr.order[i - 1]]) starts.push_back(i);
    }
    polish_intervals(sr, k, starts);

    std::vector<double> polished(starts.size());
    for (std::size_t c = 0; c < starts.size(); ++c) {
        polished[c] = sr.mean(starts[c], (c + 1 < starts.size()) ? starts[c + 1] : sr.m);
    }
    // Final Lloyd pass from the polished means: restores the documented tie
    // rules and leaves centroids equal to the weighted means of their labels.
    lloyd_iterate(v, fw, polished, labels, max_sweeps);
    return canonicalize(v, fw, labels, polished);
}

}  // namespace detail

// Best of `restarts` polished Lloyd runs; restart r uses seed + r, so the
// result does not depend on how rows are scheduled across threads.
inline ClusterResult kmeans_lloyd(std::span<const double> values,
                                  std::span<const double> weights, int k,
                                  std::uint64_t seed, int restarts = 3,
                                  int max_sweeps = 100) {
    detail::require(!values.empty(), "kmeans_lloyd: empty values");
    detail::require(k >= 1, "kmeans_lloyd: k must be >= 1");
    detail::require(values.size() == weights.size(), "kmeans_lloyd: weights length mismatch");
    detail::require(restarts >= 1, "kmeans_lloyd: restarts must be >= 1");

    const std::vector<double> fw = floor_weights(weights);
    const detail::SortedRow sr(values, fw);

    ClusterResult best;
    bool first = true;
    for (int r = 0; r < restarts; ++r) {
        ClusterResult cand = detail::lloyd_run(values, fw, sr, k,
                                               seed + static_cast<std::uint64_t>(r),
                                               max_sweeps);
        if (first || cand.objective < best.objective) {
            best = std::move(cand);
            first = false;
        }
    }
    return best;
}

inline ClusterResult kmeans_lloyd(std::span<const double> values,
                                  std::span<const double> weights, int k,
                                  const KmeansConfig& cfg) {
    return kmeans_lloyd(values, weights, k, cfg.seed, cfg.restarts, cfg.max_sweeps);
}

// Globally optimal weighted 1-D k-means by dynamic programming over sorted
// prefixes. O(k * m^2); intended as a test oracle, hence the scale guard.
inline ClusterResult kmeans_exact_dp(std::span<const double> values,
                                     std::span<const double> weights, int k) {
    const std::size_t m = values.size();
    detail::require(m >= 1, "kmeans_exact_dp: empty values");
    detail::require(k >= 1, "kmeans_exact_dp: k must be >= 1");
    detail::require(values.size() == weights.size(),
                    "kmeans_exact_dp: weights length mismatch");
    detail::require(m <= 4096, "kmeans_exact_dp: m exceeds the oracle scale guard (4096)");

    const std::vector<double> fw = floor_weights(weights);
    const detail::SortedRow sr(values, fw);

    const int kk = std::min<int>(k, static_cast<int>(m));
    const double inf = std::numeric_limits<double>::infinity();
    // dp[i]: best cost of the first i sorted points at the current cluster
    // budget; boundary[c][i]: start of the last cluster in that solution
    // (== i when the budget level is unused).
    std::vector<double> dp(m + 1, inf), ndp(m + 1, inf);
    std::vector<std::vector<std::uint16_t>> boundary(
        static_cast<std::size_t>(kk), std::vector<std::uint16_t>(m + 1, 0));
    dp[0] = 0.0;
    for (int c = 0; c < kk; ++c) {
        ndp[0] = 0.0;
        boundary[c][0] = 0;
        for (std::size_t i = 1; i <= m; ++i) {
            double best = dp[i];  // leave this budget level unused
            std::size_t best_t = i;
            for (std::size_t t = 0; t < i; ++t) {
                if (dp[t] == inf) continue;
                const double cand = dp[t] + static_cast<double>(sr.cost(t, i));
                if (cand < best) {
                    best = cand;
                    best_t = t;
                }
            }
            ndp[i] = best;
            boundary[c][i] = static_cast<std::uint16_t>(best_t);
        }
        dp.swap(ndp);
        std::fill(ndp.begin(), ndp.end(), inf);
    }

    std::vector<int> labels(m, 0);
    std::vector<double> centroids;
    {
        std::vector<std::pair<std::size_t, std::size_t>> intervals;
        std::size_t i = m;
        int c = kk - 1;
        while (i > 0) {
            std::size_t t = boundary[c][i];
            while (t == i && c > 0) {
                --c;
                t = boundary[c][i];
            }
            intervals.emplace_back(t, i);
            i = t;
            --c;
        }
        std::reverse(intervals.begin(), intervals.end());
        for (std::size_t ci = 0; ci < intervals.size(); ++ci) {
            const auto [l, r] = intervals[ci];
            centroids.push_back(sr.mean(l, r));
            for (std::size_t j = l; j < r; ++j) {
                labels[sr.order[j]] = static_cast<int>(ci);
            }
        }
    }
    return detail::canonicalize(values, fw, std::move(labels), std::move(centroids));
}

// Recomputes the clustering objective from scratch (same weight flooring as
// the clustering itself).
inline double weighted_objective(std::span<const double> values,
                                 std::span<const double> weights,
                                 const ClusterResult& result) {
    detail::require(values.size() == weights.size() && values.size() == result.labels.size(),
                    "weighted_objective: length mismatch");
    const std::vector<double> fw = floor_weights(weights);
    for (int l : result.labels) {
        detail::require(l >= 0 && l < static_cast<int>(result.centroids.size()),
                        "weighted_objective: label out of range");
    }
    return detail::assignment_objective(values, fw, result.labels, result.centroids);
}

inline std::vector<double> reconstruct_row(const ClusterResult& result) {
    std::vector<double> out(result.labels.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = result.centroids[result.labels[j]];
    }
    return out;
}

}  // namespace skim
