#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotminer/error.hpp"
#include "iotminer/labeling.hpp"
#include "iotminer/stats.hpp"
#include "iotminer/text.hpp"
#include "iotminer/time.hpp"

namespace iotminer {

struct LabeledInstance {
    std::string predicted;
    std::string reference;
};

// ---------------------------------------------------------------------------
// Similarity providers

/// Symmetric label similarity in [0, 1] with s(a, a) = 1. Results are cached per unordered pair;
/// lookups are safe from several threads.
class SimilarityProvider {
public:
    virtual ~SimilarityProvider() = default;
    virtual std::string name() const = 0;

    double similarity(const std::string& a, const std::string& b) {
        if (a.empty() || b.empty()) fail(ErrorCode::InvalidConfig, "labels must be non-empty");
        if (a == b) return 1.0;
        const auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
        {
            std::shared_lock lock(mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        }
        const double s = std::clamp(compute(key.first, key.second), 0.0, 1.0);
        std::unique_lock lock(mutex_);
        cache_.emplace(key, s);
        return s;
    }

    std::size_t cache_size() const {
        std::shared_lock lock(mutex_);
        return cache_.size();
    }

protected:
    /// Called with a < b; the result is clamped to [0, 1].
    virtual double compute(const std::string& a, const std::string& b) = 0;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::pair<std::string, std::string>, double> cache_;
};

namespace lexical_detail {

/// Code points of the ASCII-lowercased label. Invalid UTF-8 bytes are kept as single units.
inline std::vector<std::uint32_t> code_points(std::string_view s) {
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < s.size();) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
        if (i + len > s.size()) len = 1;
        std::uint32_t cp = len == 1 ? c : c & (0x7F >> len);
        for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
        if (cp >= 'A' && cp <= 'Z') cp += 'a' - 'A';
        out.push_back(cp);
        i += len;
    }
    return out;
}

using Gram = std::vector<std::uint32_t>;

inline std::map<Gram, double> trigram_counts(std::string_view label) {
    const auto cps = code_points(label);
    std::map<Gram, double> counts;
    if (cps.size() < 3) {
        counts[cps] += 1.0;
        return counts;
    }
    for (std::size_t i = 0; i + 3 <= cps.size(); ++i) counts[Gram(cps.begin() + i, cps.begin() + i + 3)] += 1.0;
    return counts;
}

} // namespace lexical_detail

/// Cosine over character-trigram count vectors of the lowercased labels. Labels shorter than three
/// characters contribute themselves as a single token.
inline double lexical_cosine(std::string_view a, std::string_view b) {
    const auto ca = lexical_detail::trigram_counts(a);
    const auto cb = lexical_detail::trigram_counts(b);
    double dot = 0, na = 0, nb = 0;
    for (const auto& [g, v] : ca) {
        na += v * v;
        if (auto it = cb.find(g); it != cb.end()) dot += v * it->second;
    }
    for (const auto& [g, v] : cb) nb += v * v;
    if (na == 0 || nb == 0) return 0.0;
    if (ca == cb) return 1.0;
    return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

class LexicalSimilarity : public SimilarityProvider {
public:
    std::string name() const override { return "lexical"; }

protected:
    double compute(const std::string& a, const std::string& b) override { return lexical_cosine(a, b); }
};

// ---------------------------------------------------------------------------
// Similarity-weighted accuracy

struct SwaResult {
    double swa = 0.0;
    double threshold = 0.0;
    std::size_t n = 0;
    std::vector<double> per_instance_scores;
};

inline constexpr double kDefaultSwaThreshold = 0.6;

/// Mean over instances of s_i where s_i >= threshold, and 0 otherwise.
inline SwaResult swa_from_scores(std::vector<double> scores, double threshold) {
    if (scores.empty()) fail(ErrorCode::EmptyInstances, "no instances to score");
    if (!(threshold >= 0.0 && threshold <= 1.0)) fail(ErrorCode::InvalidConfig, "threshold must lie in [0, 1]");
    double total = 0.0;
    for (double s : scores)
        if (s >= threshold) total += s;
    SwaResult r;
    r.threshold = threshold;
    r.n = scores.size();
    r.swa = total / static_cast<double>(scores.size());
    r.per_instance_scores = std::move(scores);
    return r;
}

inline SwaResult swa(const std::vector<LabeledInstance>& instances, double threshold, SimilarityProvider& provider) {
    if (instances.empty()) fail(ErrorCode::EmptyInstances, "no instances to score");
    std::vector<double> scores;
    scores.reserve(instances.size());
    for (const auto& in : instances) scores.push_back(provider.similarity(in.predicted, in.reference));
    return swa_from_scores(std::move(scores), threshold);
}

/// SWA restricted to the instances of each reference label, in descending frequency order.
inline nlohmann::json swa_per_reference(const std::vector<LabeledInstance>& instances, const SwaResult& overall) {
    std::map<std::string, std::pair<std::size_t, double>> groups;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        auto& g = groups[instances[i].reference];
        g.first++;
        const double s = overall.per_instance_scores[i];
        if (s >= overall.threshold) g.second += s;
    }
    std::vector<std::pair<std::string, std::pair<std::size_t, double>>> rows(groups.begin(), groups.end());
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second.first > b.second.first; });
    auto arr = nlohmann::json::array();
    for (const auto& [ref, g] : rows)
        arr.push_back({{"reference", ref}, {"n", g.first}, {"swa", g.second / static_cast<double>(g.first)}});
    return arr;
}

inline nlohmann::json evaluation_report_json(const std::vector<LabeledInstance>& instances, const SwaResult& r,
                                             const std::string& provider) {
    return {{"swa", r.swa},
            {"T", r.threshold},
            {"n", r.n},
            {"provider", provider},
            {"per_group", swa_per_reference(instances, r)}};
}

// ---------------------------------------------------------------------------
// Alignment matrix

struct AlignmentMatrix {
    std::vector<std::string> predicted_labels; ///< rows, by descending predicted frequency
    std::vector<std::string> reference_labels; ///< columns, by descending reference frequency
    std::vector<std::vector<double>> cells;    ///< similarity x co-occurrence / N
    std::vector<std::vector<double>> frequency; ///< co-occurrence / N
};

namespace alignment_detail {

inline std::vector<std::string> by_frequency(const std::map<std::string, std::size_t>& counts) {
    std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out;
    for (auto& [k, n] : v) out.push_back(k);
    return out;
}

} // namespace alignment_detail

/// Ties in frequency keep labels in lexicographic order.
inline AlignmentMatrix alignment_matrix(const std::vector<LabeledInstance>& instances, SimilarityProvider& provider) {
    if (instances.empty()) fail(ErrorCode::EmptyInstances, "no instances to align");
    std::map<std::string, std::size_t> pred_count, ref_count;
    std::map<std::pair<std::string, std::string>, std::size_t> pair_count;
    for (const auto& in : instances) {
        pred_count[in.predicted]++;
        ref_count[in.reference]++;
        pair_count[{in.predicted, in.reference}]++;
    }
    AlignmentMatrix m;
    m.predicted_labels = alignment_detail::by_frequency(pred_count);
    m.reference_labels = alignment_detail::by_frequency(ref_count);
    const double n = static_cast<double>(instances.size());
    m.cells.assign(m.predicted_labels.size(), std::vector<double>(m.reference_labels.size(), 0.0));
    m.frequency = m.cells;
    for (std::size_t i = 0; i < m.predicted_labels.size(); ++i) {
        for (std::size_t j = 0; j < m.reference_labels.size(); ++j) {
            auto it = pair_count.find({m.predicted_labels[i], m.reference_labels[j]});
            if (it == pair_count.end()) continue;
            const double f = static_cast<double>(it->second) / n;
            m.frequency[i][j] = f;
            m.cells[i][j] = provider.similarity(m.predicted_labels[i], m.reference_labels[j]) * f;
        }
    }
    return m;
}

inline nlohmann::json to_json(const AlignmentMatrix& m) {
    return {{"predicted_labels", m.predicted_labels},
            {"reference_labels", m.reference_labels},
            {"cells", m.cells},
            {"frequency", m.frequency}};
}

/// Long format: `predicted,reference,similarity_weighted_frequency,frequency`.
inline std::string alignment_csv(const AlignmentMatrix& m) {
    std::string out = "predicted,reference,value,frequency\n";
    for (std::size_t i = 0; i < m.predicted_labels.size(); ++i)
        for (std::size_t j = 0; j < m.reference_labels.size(); ++j)
            out += text::join_record({m.predicted_labels[i], m.reference_labels[j], text::format_double(m.cells[i][j]),
                                      text::format_double(m.frequency[i][j])}) +
                   "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Sweep aggregation

struct SweepRun {
    int tier = 1;
    double temperature = 0.0;
    int run_index = 0;
    std::optional<double> swa; ///< unset when the run failed
    std::string error;
};

struct SweepGroup {
    int tier = 1;
    double temperature = 0.0;
    std::size_t runs = 0;     ///< successful runs
    std::size_t failures = 0;
    std::optional<double> mean, std, se, min, max;
};

/// Groups runs by (tier, temperature), sorted by tier then temperature. Statistics use the
/// successful runs only: sample std (0 for a single run) and SE = std / sqrt(runs).
inline std::vector<SweepGroup> aggregate_sweep(const std::vector<SweepRun>& runs) {
    std::map<std::pair<int, double>, std::vector<const SweepRun*>> groups;
    for (const auto& r : runs) groups[{r.tier, r.temperature}].push_back(&r);
    std::vector<SweepGroup> out;
    for (const auto& [key, members] : groups) {
        SweepGroup g;
        g.tier = key.first;
        g.temperature = key.second;
        std::vector<double> values;
        for (const auto* r : members) {
            if (r->swa) values.push_back(*r->swa);
            else g.failures++;
        }
        g.runs = values.size();
        if (!values.empty()) {
            g.mean = stats::mean(values);
            g.std = values.size() > 1 ? stats::sstdev(values) : 0.0;
            g.se = *g.std / std::sqrt(static_cast<double>(values.size()));
            g.min = *std::min_element(values.begin(), values.end());
            g.max = *std::max_element(values.begin(), values.end());
        }
        out.push_back(g);
    }
    return out;
}

inline nlohmann::json to_json(const SweepGroup& g) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"tier", g.tier},         {"temperature", g.temperature}, {"runs", g.runs},
            {"failures", g.failures}, {"mean", opt(g.mean)},         {"std", opt(g.std)},
            {"se", opt(g.se)},        {"min", opt(g.min)},           {"max", opt(g.max)}};
}

inline std::string sweep_summary_csv(const std::vector<SweepGroup>& groups) {
    std::string out = "tier,temperature,runs,failures,mean,std,se,min,max\n";
    auto opt = [](const std::optional<double>& v) { return v ? text::format_double(*v) : std::string{}; };
    for (const auto& g : groups)
        out += text::join_record({std::to_string(g.tier), text::format_double(g.temperature), std::to_string(g.runs),
                                  std::to_string(g.failures), opt(g.mean), opt(g.std), opt(g.se), opt(g.min), opt(g.max)}) +
               "\n";
    return out;
}

/// Distinct labels across all maps after sanitization and case folding.
inline std::size_t label_diversity(const std::vector<LabelMap>& maps) {
    if (maps.empty()) fail(ErrorCode::InvalidConfig, "label_diversity needs at least one label map");
    std::set<std::string> seen;
    for (const auto& m : maps)
        for (const auto& [id, label] : m.entries) seen.insert(text::lower(sanitize_label(label).text));
    return seen.size();
}

// ---------------------------------------------------------------------------
// Partition agreement

/// Adjusted Rand Index from the contingency table of two labelings of the same rows.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) fail(ErrorCode::LengthMismatch, "partitions differ in length");
    const std::size_t n = a.size();
    if (n < 2) return 1.0;
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < n; ++i) {
        joint[{a[i], b[i]}] += 1;
        ra[a[i]] += 1;
        rb[b[i]] += 1;
    }
    auto c2 = [](double x) { return x * (x - 1) / 2; };
    double index = 0, sa = 0, sb = 0;
    for (auto& [k, v] : joint) index += c2(v);
    for (auto& [k, v] : ra) sa += c2(v);
    for (auto& [k, v] : rb) sb += c2(v);
    const double expected = sa * sb / c2(static_cast<double>(n));
    const double max_index = (sa + sb) / 2;
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

/// Maps string labels to dense integer codes in first-appearance order.
inline std::vector<int> encode_labels(const std::vector<std::string>& labels) {
    std::unordered_map<std::string, int> codes;
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(codes.emplace(l, static_cast<int>(codes.size())).first->second);
    return out;
}

// ---------------------------------------------------------------------------
// Label column input

/// Joins predicted and reference label columns. Each file is a CSV whose label column is named
/// `predicted`/`reference`, `activity` or `label`. Rows are joined on `key` (`row_id` or
/// `timestamp`; timestamps compare as instants) when both files carry it, by position otherwise.
/// A single file holding both `predicted` and `reference` may be passed with an empty
/// `reference_body`.
inline std::vector<LabeledInstance> join_label_columns(std::string_view predicted_body, std::string_view reference_body,
                                                       const std::string& key = "row_id") {
    struct Column {
        std::vector<std::string> keys; // empty when the file lacks the key column
        std::vector<std::string> labels;
    };
    auto read = [&key](std::string_view body, std::initializer_list<std::string_view> names, const char* what) {
        const auto lines = text::split_lines(body);
        if (lines.empty()) fail(ErrorCode::EmptyInstances, std::string(what) + " file is empty");
        const auto header = text::split_record(lines[0], ',');
        std::optional<std::size_t> label_col, key_col;
        for (auto name : names) {
            for (std::size_t i = 0; i < header.size() && !label_col; ++i)
                if (text::trim(header[i]) == name) label_col = i;
            if (label_col) break;
        }
        for (std::size_t i = 0; i < header.size(); ++i)
            if (text::trim(header[i]) == key) key_col = i;
        if (!label_col) fail(ErrorCode::InvalidConfig, std::string(what) + " file has no label column");
        Column c;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (text::trim(lines[i]).empty()) continue;
            const auto f = text::split_record(lines[i], ',');
            if (f.size() != header.size()) fail(ErrorCode::RaggedRow, std::string(what) + " line " + std::to_string(i + 1));
            if (key_col) {
                std::string k(text::trim(f[*key_col]));
                if (key == "timestamp") k = format_iso_millis(parse_instant_or_throw(k));
                c.keys.push_back(std::move(k));
            }
            c.labels.push_back(f[*label_col]);
        }
        return c;
    };
    std::vector<LabeledInstance> out;
    if (reference_body.empty()) {
        const auto p = read(predicted_body, {"predicted"}, "predicted");
        const auto r = read(predicted_body, {"reference"}, "reference");
        for (std::size_t i = 0; i < p.labels.size(); ++i) out.push_back({p.labels[i], r.labels[i]});
    } else {
        const auto p = read(predicted_body, {"predicted", "activity", "label"}, "predicted");
        const auto r = read(reference_body, {"reference", "activity", "label"}, "reference");
        if (!p.keys.empty() && !r.keys.empty()) {
            std::unordered_map<std::string, std::size_t> ref_index;
            for (std::size_t i = 0; i < r.keys.size(); ++i) ref_index.emplace(r.keys[i], i);
            for (std::size_t i = 0; i < p.keys.size(); ++i) {
                auto it = ref_index.find(p.keys[i]);
                if (it == ref_index.end()) continue;
                out.push_back({p.labels[i], r.labels[it->second]});
            }
        } else {
            if (p.labels.size() != r.labels.size())
                fail(ErrorCode::LengthMismatch, "predicted and reference files differ in row count");
            for (std::size_t i = 0; i < p.labels.size(); ++i) out.push_back({p.labels[i], r.labels[i]});
        }
    }
    for (const auto& in : out)
        if (in.predicted.empty() || in.reference.empty()) fail(ErrorCode::InvalidConfig, "empty label in evaluation input");
    if (out.empty()) fail(ErrorCode::EmptyInstances, "no joined instances");
    return out;
}

} // namespace iotminer
