#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "iotminer/iotminer.hpp"

namespace fixtures {

namespace fs = std::filesystem;

inline const fs::path kDataDir = IOTMINER_TEST_DATA_DIR;
inline const fs::path kSourceDir = IOTMINER_SOURCE_DIR;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "iotminer") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" +
                 std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

/// Planted modes as a canonical cluster assignment.
inline iotminer::ClusterAssignment planted_assignment(const iotminer::SyntheticData& data) {
    std::vector<int> ids(data.mode.begin(), data.mode.end());
    return iotminer::canonicalize(ids);
}

inline iotminer::Instant at(const std::string& iso) { return iotminer::parse_instant_or_throw(iso); }

/// Small synthetic run: 20 minutes at 1 Hz and a k-means-only grid, so pipeline tests stay fast.
inline iotminer::PipelineConfig small_synth_config(const fs::path& out) {
    using namespace iotminer;
    PipelineConfig c;
    c.ingestion.synthesize = true;
    c.ingestion.synth_spec.total_duration_s = 1200;
    for (std::size_t k : {5u, 6u, 7u}) {
        ClusteringConfig cc;
        cc.algorithm = Algorithm::KMeans;
        cc.normalization = NormalizationKind::MinMax;
        cc.kmeans_k = k;
        c.clustering.search_space.push_back(cc);
    }
    c.clustering.threads = 1;
    c.output_dir = out.string();
    return c;
}

} // namespace fixtures
