#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "iotminer/clustering.hpp"
#include "iotminer/error.hpp"
#include "iotminer/ingestion.hpp"
#include "iotminer/stats.hpp"

namespace iotminer {

struct SensorStats {
    double min = 0, max = 0, mean = 0, median = 0, std = 0, q1 = 0, q3 = 0;
};

/// Descriptive statistics of one cluster in original sensor units.
struct ClusterProfile {
    int cluster_id = 0; ///< -1 for the noise pseudo-cluster
    std::size_t size = 0;
    double share = 0.0;
    std::vector<std::pair<std::string, SensorStats>> stats; ///< in channel order
};

inline SensorStats describe(std::vector<double> values) {
    if (values.empty()) fail(ErrorCode::EmptyCluster, "cannot describe an empty sample");
    std::sort(values.begin(), values.end());
    SensorStats s;
    s.min = values.front();
    s.max = values.back();
    s.mean = stats::mean(values);
    s.std = stats::pstdev(values);
    s.q1 = stats::quantile_sorted(values, 0.25);
    s.median = stats::quantile_sorted(values, 0.5);
    s.q3 = stats::quantile_sorted(values, 0.75);
    return s;
}

/// One profile per cluster ID present in `assignment` (ascending, noise first when present).
/// Standard deviations are population values.
inline std::vector<ClusterProfile> cluster_profiles(const SensorFrame& frame, const std::vector<std::string>& channels,
                                                    const ClusterAssignment& assignment) {
    if (assignment.labels.size() != frame.rows())
        fail(ErrorCode::LengthMismatch, "assignment has " + std::to_string(assignment.labels.size()) +
                                            " rows, frame has " + std::to_string(frame.rows()));
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t r = 0; r < assignment.labels.size(); ++r) members[assignment.labels[r]].push_back(r);
    std::vector<ClusterProfile> out;
    const double n = static_cast<double>(frame.rows());
    for (const auto& [id, rows] : members) {
        ClusterProfile p;
        p.cluster_id = id;
        p.size = rows.size();
        p.share = static_cast<double>(rows.size()) / n;
        for (const auto& name : channels) {
            const auto& ch = frame.at(name);
            std::vector<double> values;
            for (auto r : rows)
                if (!std::isnan(ch.values[r])) values.push_back(ch.values[r]);
            p.stats.emplace_back(name, describe(std::move(values)));
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline nlohmann::ordered_json to_json(const ClusterProfile& p) {
    nlohmann::ordered_json stats = nlohmann::ordered_json::object();
    for (const auto& [name, s] : p.stats) {
        stats[name] = {{"min", s.min}, {"max", s.max},    {"mean", s.mean}, {"median", s.median},
                       {"std", s.std}, {"q1", s.q1},      {"q3", s.q3}};
    }
    return {{"cluster_id", p.cluster_id}, {"size", p.size}, {"share", p.share}, {"stats", stats}};
}

inline nlohmann::ordered_json profiles_to_json(const std::vector<ClusterProfile>& profiles) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : profiles) arr.push_back(to_json(p));
    return arr;
}

inline std::vector<ClusterProfile> profiles_from_json(const nlohmann::json& j) {
    std::vector<ClusterProfile> out;
    for (const auto& item : j) {
        ClusterProfile p;
        p.cluster_id = item.at("cluster_id");
        p.size = item.at("size");
        p.share = item.at("share");
        for (auto it = item.at("stats").begin(); it != item.at("stats").end(); ++it) {
            const auto& v = it.value();
            p.stats.emplace_back(it.key(), SensorStats{v.at("min"), v.at("max"), v.at("mean"), v.at("median"),
                                                       v.at("std"), v.at("q1"), v.at("q3")});
        }
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// PCA

struct Projection {
    Matrix coordinates;                   ///< n x dims
    std::vector<double> explained_variance_ratio;
    Matrix component_loadings;            ///< dims x d
};

/// Principal components from the eigendecomposition of the covariance matrix. Each component is
/// oriented so that its largest-magnitude loading is positive. Components beyond the data rank get
/// zero coordinates and a zero variance ratio.
inline Projection pca_project(const Matrix& x, std::size_t dims) {
    if (dims != 2 && dims != 3) fail(ErrorCode::InvalidConfig, "projection dims must be 2 or 3");
    const std::size_t n = x.rows(), d = x.cols();
    if (n < dims || d < dims) fail(ErrorCode::DegenerateRank, "need at least dims rows and columns");
    Eigen::MatrixXd data(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) data(r, c) = x(r, c);
    const Eigen::RowVectorXd mean = data.colwise().mean();
    data.rowwise() -= mean;
    const Eigen::MatrixXd cov = (data.transpose() * data) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    const Eigen::VectorXd values = solver.eigenvalues();   // ascending
    const Eigen::MatrixXd vectors = solver.eigenvectors();
    const double total = std::max(0.0, values.sum());
    const double largest = std::max(0.0, values(static_cast<Eigen::Index>(d - 1)));
    const double rank_tol = std::max(1e-12, largest * 1e-10 * static_cast<double>(d));

    Projection p;
    p.coordinates = Matrix(n, dims, 0.0);
    p.component_loadings = Matrix(dims, d, 0.0);
    for (std::size_t m = 0; m < dims; ++m) {
        const auto idx = static_cast<Eigen::Index>(d - 1 - m);
        const double lambda = values(idx);
        if (!(lambda > rank_tol)) {
            p.explained_variance_ratio.push_back(0.0);
            continue;
        }
        Eigen::VectorXd v = vectors.col(idx);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        p.explained_variance_ratio.push_back(total > 0 ? lambda / total : 0.0);
        for (std::size_t c = 0; c < d; ++c) p.component_loadings(m, c) = v(static_cast<Eigen::Index>(c));
        const Eigen::VectorXd coords = data * v;
        for (std::size_t r = 0; r < n; ++r) p.coordinates(r, m) = coords(static_cast<Eigen::Index>(r));
    }
    return p;
}

/// `row_id,x,y[,z],cluster_id`
inline std::string write_projection_csv(const Projection& p, const ClusterAssignment& a) {
    const std::size_t dims = p.coordinates.cols();
    std::string out = dims == 3 ? "row_id,x,y,z,cluster_id\n" : "row_id,x,y,cluster_id\n";
    for (std::size_t r = 0; r < p.coordinates.rows(); ++r) {
        out += std::to_string(r);
        for (std::size_t m = 0; m < dims; ++m) out += "," + text::format_double(p.coordinates(r, m));
        out += "," + std::to_string(a.labels[r]) + "\n";
    }
    return out;
}

} // namespace iotminer
