#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <array>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotminer/error.hpp"
#include "iotminer/featurization.hpp"
#include "iotminer/matrix.hpp"
#include "iotminer/validity.hpp"

namespace iotminer {

inline constexpr int kNoiseLabel = -1;

/// Row-aligned cluster IDs. Non-noise IDs are contiguous 0..k-1 in order of first appearance.
struct ClusterAssignment {
    std::vector<int> labels;
    int k = 0;

    bool has_noise() const { return std::find(labels.begin(), labels.end(), kNoiseLabel) != labels.end(); }

    friend bool operator==(const ClusterAssignment&, const ClusterAssignment&) = default;
};

/// Renumbers non-noise IDs by first appearance over rows; noise stays -1.
inline ClusterAssignment canonicalize(std::span<const int> raw) {
    ClusterAssignment out;
    out.labels.reserve(raw.size());
    std::map<int, int> remap;
    for (int id : raw) {
        if (id < 0) {
            out.labels.push_back(kNoiseLabel);
            continue;
        }
        auto [it, inserted] = remap.emplace(id, static_cast<int>(remap.size()));
        out.labels.push_back(it->second);
    }
    out.k = static_cast<int>(remap.size());
    return out;
}

// ---------------------------------------------------------------------------
// Seeded randomness with a platform-independent uniform draw

class SplitRng {
public:
    explicit SplitRng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    std::size_t index(std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n))); }
    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// K-means

struct KMeansOptions {
    std::size_t max_iter = 300;
    double tol = 1e-6;
    std::size_t n_init = 4; ///< independent seeded k-means++ starts; lowest SSE wins
};

struct KMeansResult {
    ClusterAssignment assignment;
    Matrix centroids; ///< k x d, row i belongs to canonical cluster i
    double sse = 0.0;
    std::vector<double> sse_history; ///< SSE after each assignment step of the winning start
    std::size_t iterations = 0;
};

namespace kmeans_detail {

inline Matrix plus_plus_init(const Matrix& x, std::size_t k, SplitRng& rng) {
    const std::size_t n = x.rows(), d = x.cols();
    Matrix centers(k, d);
    auto first = rng.index(n);
    std::copy(x.row(first).begin(), x.row(first).end(), centers.row(0).begin());
    std::vector<double> best(n);
    for (std::size_t i = 0; i < n; ++i) best[i] = squared_euclidean(x.row(i), centers.row(0));
    for (std::size_t c = 1; c < k; ++c) {
        const double total = std::accumulate(best.begin(), best.end(), 0.0);
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = rng.index(n);
        } else {
            double target = rng.uniform() * total;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                target -= best[i];
                if (target < 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
        for (std::size_t i = 0; i < n; ++i) best[i] = std::min(best[i], squared_euclidean(x.row(i), centers.row(c)));
    }
    return centers;
}

inline double assign(const Matrix& x, const Matrix& centers, std::vector<int>& labels, std::vector<double>& dist) {
    double sse = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        int arg = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centers.rows(); ++c) {
            const double dd = squared_euclidean(x.row(i), centers.row(c));
            if (dd < best) {
                best = dd;
                arg = static_cast<int>(c);
            }
        }
        labels[i] = arg;
        dist[i] = best;
        sse += best;
    }
    return sse;
}

struct Run {
    std::vector<int> labels;
    Matrix centers;
    double sse;
    std::vector<double> history;
    std::size_t iterations;
};

inline Run lloyd(const Matrix& x, std::size_t k, SplitRng& rng, const KMeansOptions& opt) {
    const std::size_t n = x.rows(), d = x.cols();
    Run run{std::vector<int>(n, 0), plus_plus_init(x, k, rng), 0.0, {}, 0};
    std::vector<double> dist(n);
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
        run.sse = assign(x, run.centers, run.labels, dist);
        run.history.push_back(run.sse);
        run.iterations = it + 1;

        Matrix next(k, d, 0.0);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto dst = next.row(static_cast<std::size_t>(run.labels[i]));
            auto src = x.row(i);
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            counts[static_cast<std::size_t>(run.labels[i])]++;
        }
        std::vector<bool> taken(n, false);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (auto& v : next.row(c)) v /= static_cast<double>(counts[c]);
                continue;
            }
            // Empty cluster: re-seed at the point farthest from its centroid.
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!taken[i] && dist[i] > far_d) {
                    far_d = dist[i];
                    far = i;
                }
            }
            taken[far] = true;
            std::copy(x.row(far).begin(), x.row(far).end(), next.row(c).begin());
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, euclidean(next.row(c), run.centers.row(c)));
        run.centers = std::move(next);
        if (shift <= opt.tol) break;
    }
    run.sse = assign(x, run.centers, run.labels, dist);
    run.history.push_back(run.sse);
    return run;
}

} // namespace kmeans_detail

inline KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, const KMeansOptions& opt = {}) {
    if (k < 1) fail(ErrorCode::InvalidConfig, "k must be >= 1");
    if (k > x.rows()) fail(ErrorCode::KExceedsN, "k = " + std::to_string(k) + " exceeds n = " + std::to_string(x.rows()));
    if (opt.max_iter < 1) fail(ErrorCode::InvalidConfig, "max_iter must be >= 1");
    if (opt.tol < 0) fail(ErrorCode::InvalidConfig, "tol must be >= 0");
    SplitRng rng(seed);
    std::optional<kmeans_detail::Run> best;
    for (std::size_t start = 0; start < std::max<std::size_t>(1, opt.n_init); ++start) {
        auto run = kmeans_detail::lloyd(x, k, rng, opt);
        if (!best || run.sse < best->sse) best = std::move(run);
    }
    KMeansResult result;
    result.assignment = canonicalize(best->labels);
    result.sse = best->sse;
    result.sse_history = best->history;
    result.iterations = best->iterations;
    // Centroids reported as the means of the final partition, in canonical order.
    const auto kk = static_cast<std::size_t>(result.assignment.k);
    result.centroids = Matrix(kk, x.cols(), 0.0);
    std::vector<std::size_t> counts(kk, 0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto c = static_cast<std::size_t>(result.assignment.labels[i]);
        auto dst = result.centroids.row(c);
        auto src = x.row(i);
        for (std::size_t j = 0; j < x.cols(); ++j) dst[j] += src[j];
        counts[c]++;
    }
    for (std::size_t c = 0; c < kk; ++c)
        for (auto& v : result.centroids.row(c)) v /= static_cast<double>(counts[c]);
    return result;
}

// ---------------------------------------------------------------------------
// DBSCAN

/// Core point iff at least `min_pts` points (itself included) lie within eps (inclusive).
/// Unreachable non-core points are noise (-1); cluster IDs follow scan order.
inline ClusterAssignment dbscan(const Matrix& x, double eps, std::size_t min_pts,
                                DistanceMetric metric = DistanceMetric::Euclidean) {
    if (!(eps > 0)) fail(ErrorCode::InvalidConfig, "eps must be > 0");
    if (min_pts < 1) fail(ErrorCode::InvalidConfig, "min_pts must be >= 1");
    const std::size_t n = x.rows();
    constexpr int kUnvisited = -2;
    std::vector<int> labels(n, kUnvisited);
    auto neighbours = [&](std::size_t i) {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < n; ++j)
            if (distance(x.row(i), x.row(j), metric) <= eps) out.push_back(j);
        return out;
    };
    int cluster = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != kUnvisited) continue;
        auto seeds = neighbours(i);
        if (seeds.size() < min_pts) {
            labels[i] = kNoiseLabel;
            continue;
        }
        labels[i] = cluster;
        std::vector<std::size_t> frontier;
        for (auto j : seeds)
            if (j != i) frontier.push_back(j);
        for (std::size_t f = 0; f < frontier.size(); ++f) {
            const auto j = frontier[f];
            if (labels[j] == kNoiseLabel) labels[j] = cluster; // border point
            if (labels[j] != kUnvisited) continue;
            labels[j] = cluster;
            auto more = neighbours(j);
            if (more.size() >= min_pts)
                for (auto m : more)
                    if (labels[m] == kUnvisited || labels[m] == kNoiseLabel) frontier.push_back(m);
        }
        ++cluster;
    }
    return canonicalize(labels);
}


// ---------------------------------------------------------------------------
// Configurations and model selection

enum class Algorithm { KMeans, Dbscan };

inline std::string_view to_string(Algorithm a) { return a == Algorithm::KMeans ? "kmeans" : "dbscan"; }
inline std::string_view to_string(DistanceMetric m) { return m == DistanceMetric::Euclidean ? "euclidean" : "manhattan"; }

inline DistanceMetric parse_metric(std::string_view s) {
    if (s == "euclidean") return DistanceMetric::Euclidean;
    if (s == "manhattan") return DistanceMetric::Manhattan;
    fail(ErrorCode::InvalidConfig, "unknown distance metric '" + std::string(s) + "'");
}

struct ClusteringConfig {
    Algorithm algorithm = Algorithm::KMeans;
    NormalizationKind normalization = NormalizationKind::Robust;
    std::size_t kmeans_k = 2;
    double dbscan_eps = 0.5;
    std::size_t dbscan_min_pts = 4;
    DistanceMetric distance_metric = DistanceMetric::Euclidean;
    std::uint64_t seed = 42;

    void validate() const {
        if (algorithm == Algorithm::KMeans && kmeans_k < 1) fail(ErrorCode::InvalidConfig, "kmeans_k must be >= 1");
        if (algorithm == Algorithm::Dbscan) {
            if (!(dbscan_eps > 0)) fail(ErrorCode::InvalidConfig, "dbscan_eps must be > 0");
            if (dbscan_min_pts < 1) fail(ErrorCode::InvalidConfig, "dbscan_min_pts must be >= 1");
        }
    }
};

inline nlohmann::json to_json(const ClusteringConfig& c) {
    nlohmann::json j;
    j["algorithm"] = std::string(to_string(c.algorithm));
    j["normalization"] = std::string(to_string(c.normalization));
    if (c.algorithm == Algorithm::KMeans) {
        j["kmeans_k"] = c.kmeans_k;
        j["seed"] = c.seed;
    } else {
        j["dbscan_eps"] = c.dbscan_eps;
        j["dbscan_min_pts"] = c.dbscan_min_pts;
        j["distance_metric"] = std::string(to_string(c.distance_metric));
    }
    return j;
}

inline ClusteringConfig clustering_config_from_json(const nlohmann::json& j) {
    ClusteringConfig c;
    const auto algo = j.at("algorithm").get<std::string>();
    if (algo == "kmeans") c.algorithm = Algorithm::KMeans;
    else if (algo == "dbscan") c.algorithm = Algorithm::Dbscan;
    else fail(ErrorCode::InvalidConfig, "unknown algorithm '" + algo + "'");
    c.normalization = parse_normalization(j.value("normalization", std::string("robust")));
    if (c.algorithm == Algorithm::KMeans) {
        c.kmeans_k = j.at("kmeans_k").get<std::size_t>();
        c.seed = j.value("seed", std::uint64_t{42});
    } else {
        c.dbscan_eps = j.at("dbscan_eps").get<double>();
        c.dbscan_min_pts = j.at("dbscan_min_pts").get<std::size_t>();
        c.distance_metric = parse_metric(j.value("distance_metric", std::string("euclidean")));
    }
    c.validate();
    return c;
}

struct ClusteringResult {
    ClusteringConfig config;
    std::size_t config_index = 0; ///< position in the search space
    ClusterAssignment assignment;
    std::optional<double> silhouette;
    std::optional<double> davies_bouldin;
    std::optional<double> calinski_harabasz;
    bool silhouette_subsampled = false;
    double noise_fraction = 0.0;
    Matrix centroids;

    bool indices_defined() const { return silhouette && davies_bouldin && calinski_harabasz; }
};

/// Median pairwise Euclidean distance over an evenly strided sample of at most `max_rows` rows.
inline double median_pairwise_distance(const Matrix& x, std::size_t max_rows = 1000) {
    const std::size_t n = x.rows();
    if (n < 2) return 0.0;
    const std::size_t m = std::min(n, max_rows);
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i * n / m;
    std::vector<double> d;
    d.reserve(m * (m - 1) / 2);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = a + 1; b < m; ++b) d.push_back(euclidean(x.row(idx[a]), x.row(idx[b])));
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid;
}

inline constexpr std::array<NormalizationKind, 3> kGridNormalizations = {
    NormalizationKind::Standard, NormalizationKind::MinMax, NormalizationKind::Robust};
inline constexpr std::array<double, 4> kEpsScales = {0.1, 0.25, 0.5, 1.0};

/// Default grid: per normalization, k-means for k = 2..10, then DBSCAN with eps in
/// {0.1, 0.25, 0.5, 1.0} x median pairwise distance and min_pts in {4, 2d}.
inline std::vector<ClusteringConfig> default_search_space(const Matrix& raw, std::uint64_t seed = 42) {
    std::vector<ClusteringConfig> space;
    for (auto norm : kGridNormalizations) {
        for (std::size_t k = 2; k <= 10; ++k) {
            if (k > raw.rows()) break;
            ClusteringConfig c;
            c.algorithm = Algorithm::KMeans;
            c.normalization = norm;
            c.kmeans_k = k;
            c.seed = seed;
            space.push_back(c);
        }
    }
    for (auto norm : kGridNormalizations) {
        const auto normalized = apply_normalizer(raw, fit_normalizer(raw, norm));
        const double med = median_pairwise_distance(normalized);
        if (!(med > 0)) continue;
        std::set<std::size_t> min_pts_set{4, 2 * raw.cols()};
        for (double scale : kEpsScales) {
            for (auto mp : min_pts_set) {
                ClusteringConfig c;
                c.algorithm = Algorithm::Dbscan;
                c.normalization = norm;
                c.dbscan_eps = scale * med;
                c.dbscan_min_pts = mp;
                c.distance_metric = DistanceMetric::Euclidean;
                space.push_back(c);
            }
        }
    }
    return space;
}

struct GridOptions {
    KMeansOptions kmeans;
    std::size_t threads = 0; ///< 0 = hardware concurrency
    std::size_t silhouette_max_rows = kSilhouetteExactLimit;
};

/// Fits and scores one configuration against an un-normalized feature matrix.
inline ClusteringResult evaluate_config(const Matrix& raw, const ClusteringConfig& config, const GridOptions& opt = {}) {
    config.validate();
    const Matrix x = apply_normalizer(raw, fit_normalizer(raw, config.normalization));
    ClusteringResult r;
    r.config = config;
    if (config.algorithm == Algorithm::KMeans) {
        auto km = kmeans(x, config.kmeans_k, config.seed, opt.kmeans);
        r.assignment = std::move(km.assignment);
        r.centroids = std::move(km.centroids);
    } else {
        r.assignment = dbscan(x, config.dbscan_eps, config.dbscan_min_pts, config.distance_metric);
        r.centroids = cluster_means(x, r.assignment.labels);
    }
    const auto noise = std::count(r.assignment.labels.begin(), r.assignment.labels.end(), kNoiseLabel);
    r.noise_fraction = x.rows() ? static_cast<double>(noise) / static_cast<double>(x.rows()) : 0.0;
    const std::size_t clustered = x.rows() - static_cast<std::size_t>(noise);
    if (r.assignment.k >= 2 && clustered > static_cast<std::size_t>(r.assignment.k)) {
        auto sil = silhouette_score(x, r.assignment.labels, opt.silhouette_max_rows, config.seed);
        r.silhouette = sil.value;
        r.silhouette_subsampled = sil.subsampled;
        r.davies_bouldin = davies_bouldin(x, r.assignment.labels);
        r.calinski_harabasz = calinski_harabasz(x, r.assignment.labels);
    }
    return r;
}

/// Lexicographic ranking: defined indices first, then silhouette (desc), Davies-Bouldin (asc),
/// Calinski-Harabasz (desc), and finally search-space order.
inline bool ranks_before(const ClusteringResult& a, const ClusteringResult& b) {
    const bool da = a.indices_defined(), db = b.indices_defined();
    if (da != db) return da;
    if (da) {
        if (*a.silhouette != *b.silhouette) return *a.silhouette > *b.silhouette;
        if (*a.davies_bouldin != *b.davies_bouldin) return *a.davies_bouldin < *b.davies_bouldin;
        if (*a.calinski_harabasz != *b.calinski_harabasz) return *a.calinski_harabasz > *b.calinski_harabasz;
    }
    return a.config_index < b.config_index;
}

/// Evaluates every configuration (concurrently) and returns the full ranked table.
/// The ranking does not depend on the number of threads.
inline std::vector<ClusteringResult> grid_search(const Matrix& raw, const std::vector<ClusteringConfig>& space,
                                                 const GridOptions& opt = {}) {
    if (space.empty()) fail(ErrorCode::InvalidConfig, "search space is empty");
    std::vector<std::optional<ClusteringResult>> slots(space.size());
    std::vector<std::exception_ptr> errors(space.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < space.size(); i = next++) {
            try {
                auto r = evaluate_config(raw, space[i], opt);
                r.config_index = i;
                slots[i] = std::move(r);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::size_t threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, space.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<ClusteringResult> results;
    for (auto& s : slots) results.push_back(std::move(*s));
    std::stable_sort(results.begin(), results.end(), ranks_before);
    if (!results.front().indices_defined())
        fail(ErrorCode::AllConfigsDegenerate, "no configuration produced two or more clusters");
    return results;
}

/// Convenience overload: builds the base-channel feature matrix from `frame`.
inline std::vector<ClusteringResult> grid_search(const SensorFrame& frame, const std::vector<std::string>& channels,
                                                 const std::vector<ClusteringConfig>& space, const GridOptions& opt = {}) {
    FeatureSpec spec;
    spec.base_channels = channels;
    return grid_search(build_feature_matrix(frame, spec).rows, space, opt);
}

namespace json_detail {
inline nlohmann::json index_value(const std::optional<double>& v) {
    if (!v) return nullptr;
    if (std::isinf(*v)) return *v > 0 ? "Infinity" : "-Infinity";
    return *v;
}
} // namespace json_detail

inline nlohmann::json results_to_json(const std::vector<ClusteringResult>& ranked) {
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const auto& r = ranked[i];
        arr.push_back({{"rank", i + 1},
                       {"config_index", r.config_index},
                       {"config", to_json(r.config)},
                       {"k", r.assignment.k},
                       {"silhouette", json_detail::index_value(r.silhouette)},
                       {"davies_bouldin", json_detail::index_value(r.davies_bouldin)},
                       {"calinski_harabasz", json_detail::index_value(r.calinski_harabasz)},
                       {"silhouette_subsampled", r.silhouette_subsampled},
                       {"noise_fraction", r.noise_fraction}});
    }
    return arr;
}

inline std::vector<ClusteringConfig> search_space_from_json(const nlohmann::json& j) {
    std::vector<ClusteringConfig> out;
    for (const auto& item : j) out.push_back(clustering_config_from_json(item));
    return out;
}

/// `row_id,timestamp,cluster`
inline std::string write_assignment_csv(const ClusterAssignment& a, const std::vector<Instant>& stamps) {
    std::string out = "row_id,timestamp,cluster\n";
    for (std::size_t i = 0; i < a.labels.size(); ++i)
        out += std::to_string(i) + "," + format_iso_millis(stamps[i]) + "," + std::to_string(a.labels[i]) + "\n";
    return out;
}

inline ClusterAssignment read_assignment_csv(std::string_view body) {
    auto lines = text::split_lines(body);
    std::vector<int> labels;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty()) continue;
        auto rec = text::split_record(lines[i], ',');
        auto v = text::parse_int(rec.back());
        if (!v) fail(ErrorCode::IoError, "assignment row " + std::to_string(i - 1) + " has no cluster id");
        labels.push_back(static_cast<int>(*v));
    }
    ClusterAssignment a;
    a.labels = labels;
    std::set<int> ids;
    for (int l : labels)
        if (l >= 0) ids.insert(l);
    a.k = static_cast<int>(ids.size());
    return a;
}

} // namespace iotminer
