#pragma once

// Internal cluster validity indices. All of them ignore noise rows (label -1) and measure
// Euclidean distances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iotminer/error.hpp"
#include "iotminer/matrix.hpp"

namespace iotminer {

/// Above this many clustered rows the silhouette is computed on a seeded uniform subsample.
inline constexpr std::size_t kSilhouetteExactLimit = 20'000;

namespace validity_detail {

struct Groups {
    std::vector<std::size_t> rows;   // non-noise row indices
    std::vector<std::size_t> label;  // dense cluster index per entry of `rows`
    std::vector<std::size_t> counts; // per dense cluster
};

inline Groups group(std::span<const int> labels) {
    Groups g;
    std::vector<int> ids;
    for (int l : labels)
        if (l >= 0) ids.push_back(l);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    g.counts.assign(ids.size(), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) continue;
        const auto dense = static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), labels[i]) - ids.begin());
        g.rows.push_back(i);
        g.label.push_back(dense);
        g.counts[dense]++;
    }
    return g;
}

inline Matrix centroids(const Matrix& x, const Groups& g) {
    Matrix c(g.counts.size(), x.cols(), 0.0);
    for (std::size_t e = 0; e < g.rows.size(); ++e) {
        auto dst = c.row(g.label[e]);
        auto src = x.row(g.rows[e]);
        for (std::size_t j = 0; j < x.cols(); ++j) dst[j] += src[j];
    }
    for (std::size_t k = 0; k < g.counts.size(); ++k)
        for (auto& v : c.row(k)) v /= static_cast<double>(g.counts[k]);
    return c;
}

inline void require_two(const Groups& g, const char* index) {
    if (g.counts.size() < 2) fail(ErrorCode::UndefinedIndex, std::string(index) + " needs at least two clusters");
}

} // namespace validity_detail

/// Per-cluster means of the non-noise rows, in ascending cluster-ID order.
inline Matrix cluster_means(const Matrix& x, std::span<const int> labels) {
    return validity_detail::centroids(x, validity_detail::group(labels));
}

struct SilhouetteValue {
    double value = 0.0;
    bool subsampled = false;
};

inline SilhouetteValue silhouette_score(const Matrix& x, std::span<const int> labels,
                                        std::size_t max_rows = kSilhouetteExactLimit, std::uint64_t seed = 0) {
    auto g = validity_detail::group(labels);
    validity_detail::require_two(g, "silhouette");
    SilhouetteValue out;
    if (g.rows.size() > max_rows) {
        // Partial Fisher-Yates draw of max_rows entries, then restore row order.
        std::mt19937_64 rng(seed);
        std::vector<std::size_t> pick(g.rows.size());
        std::iota(pick.begin(), pick.end(), 0);
        for (std::size_t i = 0; i < max_rows; ++i) {
            const auto span = pick.size() - i;
            const auto j = i + static_cast<std::size_t>((rng() >> 11) * 0x1.0p-53 * static_cast<double>(span));
            std::swap(pick[i], pick[std::min(j, pick.size() - 1)]);
        }
        pick.resize(max_rows);
        std::sort(pick.begin(), pick.end());
        std::vector<int> sub(labels.size(), -1);
        for (auto e : pick) sub[g.rows[e]] = static_cast<int>(g.label[e]);
        g = validity_detail::group(sub);
        validity_detail::require_two(g, "silhouette");
        out.subsampled = true;
    }
    const std::size_t m = g.rows.size(), k = g.counts.size();
    std::vector<double> sums(m * k, 0.0);
    for (std::size_t a = 0; a < m; ++a) {
        auto ra = x.row(g.rows[a]);
        for (std::size_t b = a + 1; b < m; ++b) {
            const double d = euclidean(ra, x.row(g.rows[b]));
            sums[a * k + g.label[b]] += d;
            sums[b * k + g.label[a]] += d;
        }
    }
    double total = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
        const auto own = g.label[a];
        if (g.counts[own] < 2) continue; // singleton contributes 0
        const double intra = sums[a * k + own] / static_cast<double>(g.counts[own] - 1);
        double inter = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c)
            if (c != own) inter = std::min(inter, sums[a * k + c] / static_cast<double>(g.counts[c]));
        const double denom = std::max(intra, inter);
        if (denom > 0) total += (inter - intra) / denom;
    }
    out.value = total / static_cast<double>(m);
    return out;
}

/// Mean over clusters of the worst (S_i + S_j) / M_ij ratio. Coincident centroids give +inf.
inline double davies_bouldin(const Matrix& x, std::span<const int> labels) {
    const auto g = validity_detail::group(labels);
    validity_detail::require_two(g, "Davies-Bouldin");
    const auto c = validity_detail::centroids(x, g);
    const std::size_t k = g.counts.size();
    std::vector<double> scatter(k, 0.0);
    for (std::size_t e = 0; e < g.rows.size(); ++e) scatter[g.label[e]] += euclidean(x.row(g.rows[e]), c.row(g.label[e]));
    for (std::size_t i = 0; i < k; ++i) scatter[i] /= static_cast<double>(g.counts[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double worst = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            const double sep = euclidean(c.row(i), c.row(j));
            const double ratio = sep == 0.0 ? std::numeric_limits<double>::infinity() : (scatter[i] + scatter[j]) / sep;
            worst = std::max(worst, ratio);
        }
        total += worst;
    }
    return total / static_cast<double>(k);
}

/// [B / (k - 1)] / [W / (n - k)]; zero within-cluster scatter yields +inf.
inline double calinski_harabasz(const Matrix& x, std::span<const int> labels) {
    const auto g = validity_detail::group(labels);
    validity_detail::require_two(g, "Calinski-Harabasz");
    const std::size_t n = g.rows.size(), k = g.counts.size();
    if (n <= k) fail(ErrorCode::UndefinedIndex, "Calinski-Harabasz needs n > k");
    const auto c = validity_detail::centroids(x, g);
    std::vector<double> overall(x.cols(), 0.0);
    for (auto r : g.rows)
        for (std::size_t j = 0; j < x.cols(); ++j) overall[j] += x(r, j);
    for (auto& v : overall) v /= static_cast<double>(n);
    double between = 0.0, within = 0.0;
    for (std::size_t i = 0; i < k; ++i) between += static_cast<double>(g.counts[i]) * squared_euclidean(c.row(i), overall);
    for (std::size_t e = 0; e < n; ++e) within += squared_euclidean(x.row(g.rows[e]), c.row(g.label[e]));
    if (within == 0.0) return std::numeric_limits<double>::infinity();
    return (between / static_cast<double>(k - 1)) / (within / static_cast<double>(n - k));
}

} // namespace iotminer
