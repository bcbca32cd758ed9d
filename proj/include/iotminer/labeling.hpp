#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotminer/clustering.hpp"
#include "iotminer/error.hpp"
#include "iotminer/profiling.hpp"
#include "iotminer/text.hpp"

namespace iotminer {

// ---------------------------------------------------------------------------
// Prompt construction

struct PromptTier {
    int tier = 1; ///< 1 basic, 2 adds labeling instructions, 3 adds user operational context
    std::string user_context;

    void validate() const {
        if (tier < 1 || tier > 3) fail(ErrorCode::InvalidConfig, "prompt tier must be 1, 2 or 3");
        if (tier == 3 && text::trim(user_context).empty())
            fail(ErrorCode::MissingContext, "tier 3 prompts require a non-empty user context");
    }
};

namespace prompt_blocks {

inline constexpr std::string_view kTask =
    "The clusters below were discovered by clustering time-series sensor data recorded on an industrial "
    "machine. Each cluster is summarised by per-sensor statistics (min, max, mean, median, std, q1, q3) in "
    "the original sensor units.\n"
    "Assign every cluster a short activity label naming the operation the machine performs in that state.\n"
    "\n"
    "Cluster profiles (JSON):\n"
    "```json\n"
    "{PROFILES_JSON}\n"
    "```\n"
    "\n"
    "Output format: reply with exactly one line per cluster in the form `cluster <id>: <label>` and nothing "
    "else.\n";

inline constexpr std::string_view kInstructions =
    "Labeling instructions:\n"
    "- Use concise activity names of one to four words, for example: Idling, Loading, Hauling Loaded, "
    "Dumping, Returning Empty, Stopped.\n"
    "- Give every cluster exactly one label.\n"
    "- Avoid ambiguous labels: never combine alternatives with the word \"or\".\n"
    "\n";

inline constexpr std::string_view kContext =
    "Operational context:\n"
    "{USER_CONTEXT}\n"
    "\n";

inline constexpr std::string_view kProfilesOpen = "```json\n";
inline constexpr std::string_view kProfilesClose = "\n```";

} // namespace prompt_blocks

/// The prompt pool: one template per tier with `{PROFILES_JSON}` and `{USER_CONTEXT}` placeholders.
struct PromptPool {
    std::string tier1 = std::string(prompt_blocks::kTask);
    std::string tier2 = std::string(prompt_blocks::kInstructions) + std::string(prompt_blocks::kTask);
    std::string tier3 = std::string(prompt_blocks::kContext) + std::string(prompt_blocks::kInstructions) +
                        std::string(prompt_blocks::kTask);

    const std::string& for_tier(int tier) const { return tier == 1 ? tier1 : tier == 2 ? tier2 : tier3; }

    /// Loads `tier1.txt`, `tier2.txt`, `tier3.txt` from a directory; missing files keep the default.
    static PromptPool from_directory(const std::filesystem::path& dir) {
        PromptPool pool;
        std::string* slots[] = {&pool.tier1, &pool.tier2, &pool.tier3};
        for (int t = 1; t <= 3; ++t) {
            const auto path = dir / ("tier" + std::to_string(t) + ".txt");
            if (std::filesystem::exists(path)) *slots[t - 1] = text::read_file(path);
        }
        return pool;
    }
};

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

/// Profiles JSON embedded in prompts: the noise pseudo-cluster is left out.
inline std::string prompt_profiles_json(const std::vector<ClusterProfile>& profiles) {
    std::vector<ClusterProfile> kept;
    for (const auto& p : profiles)
        if (p.cluster_id != kNoiseLabel) kept.push_back(p);
    return profiles_to_json(kept).dump(2);
}

inline std::string build_prompt(const std::vector<ClusterProfile>& profiles, const PromptTier& tier,
                                const PromptPool& pool = {}) {
    tier.validate();
    const bool any = std::any_of(profiles.begin(), profiles.end(), [](const auto& p) { return p.cluster_id != kNoiseLabel; });
    if (!any) fail(ErrorCode::InvalidConfig, "no cluster profiles to label");
    // Context is substituted last so user text cannot inject a profiles placeholder.
    auto prompt = replace_all(pool.for_tier(tier.tier), "{PROFILES_JSON}", prompt_profiles_json(profiles));
    return replace_all(std::move(prompt), "{USER_CONTEXT}", std::string(text::trim(tier.user_context)));
}

// ---------------------------------------------------------------------------
// Backends

struct LlmOptions {
    std::string model = "gpt-4";
    double temperature = 0.0;
    int max_tokens = 600;
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string credential_env = "IOTMINER_API_KEY";
    double timeout_seconds = 60.0;
    int retries = 3;
    int backoff_initial_ms = 500;
    int backoff_max_ms = 8000;
    std::uint64_t seed = 0; ///< consumed by the mock backend only

    void validate() const {
        if (!(temperature >= 0.0 && temperature <= 1.0)) fail(ErrorCode::InvalidConfig, "temperature must lie in [0, 1]");
        if (max_tokens < 1) fail(ErrorCode::InvalidConfig, "max_tokens must be positive");
        if (retries < 0) fail(ErrorCode::InvalidConfig, "retries must be >= 0");
        if (!(timeout_seconds > 0)) fail(ErrorCode::InvalidConfig, "timeout must be positive");
    }
};

enum class AttemptStatus { Ok, Transient, Auth, RateLimited, Timeout, Malformed, Fatal };

struct AttemptResult {
    AttemptStatus status = AttemptStatus::Ok;
    int http_status = 0;
    std::string text; ///< completion on success, diagnostic otherwise
    std::optional<long long> prompt_tokens;
    std::optional<long long> completion_tokens;
};

/// One transport attempt; retry policy lives in request_labels.
class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual AttemptResult attempt(const std::string& prompt, const LlmOptions& options) = 0;
    virtual std::string name() const = 0;
};

/// Metadata about one logical request, recorded in the run manifest.
struct CallRecord {
    std::string backend;
    std::string model;
    double temperature = 0.0;
    int attempts = 0;
    std::vector<int> http_statuses;
    double latency_ms = 0.0;
    std::optional<long long> prompt_tokens;
    std::optional<long long> completion_tokens;
    std::string prompt_hash;
};

inline nlohmann::json to_json(const CallRecord& r) {
    nlohmann::json j{{"backend", r.backend},       {"model", r.model},           {"temperature", r.temperature},
                     {"attempts", r.attempts},     {"http_statuses", r.http_statuses},
                     {"latency_ms", r.latency_ms}, {"prompt_hash", r.prompt_hash}};
    j["prompt_tokens"] = r.prompt_tokens ? nlohmann::json(*r.prompt_tokens) : nlohmann::json(nullptr);
    j["completion_tokens"] = r.completion_tokens ? nlohmann::json(*r.completion_tokens) : nlohmann::json(nullptr);
    return j;
}

inline std::string prompt_hash(std::string_view prompt) { return text::hex64(text::fnv1a(prompt)); }

/// Sends the prompt, retrying transient failures (429, 5xx, timeouts) with exponential backoff.
/// Authentication failures and malformed responses are not retried.
inline std::string request_labels(const std::string& prompt, const LlmOptions& options, LlmBackend& backend,
                                  CallRecord* record = nullptr) {
    options.validate();
    CallRecord local;
    CallRecord& rec = record ? *record : local;
    rec.backend = backend.name();
    rec.model = options.model;
    rec.temperature = options.temperature;
    rec.prompt_hash = prompt_hash(prompt);
    const auto started = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    };
    int delay = options.backoff_initial_ms;
    for (int attempt = 0;; ++attempt) {
        auto result = backend.attempt(prompt, options);
        rec.attempts = attempt + 1;
        rec.http_statuses.push_back(result.http_status);
        switch (result.status) {
        case AttemptStatus::Ok:
            rec.latency_ms = elapsed();
            rec.prompt_tokens = result.prompt_tokens;
            rec.completion_tokens = result.completion_tokens;
            return result.text;
        case AttemptStatus::Auth:
            rec.latency_ms = elapsed();
            fail(ErrorCode::AuthError, result.text);
        case AttemptStatus::Malformed:
            rec.latency_ms = elapsed();
            fail(ErrorCode::MalformedResponse, result.text);
        case AttemptStatus::Fatal:
            rec.latency_ms = elapsed();
            fail(ErrorCode::BackendError, result.text);
        case AttemptStatus::Transient:
        case AttemptStatus::RateLimited:
        case AttemptStatus::Timeout:
            if (attempt >= options.retries) {
                rec.latency_ms = elapsed();
                if (result.status == AttemptStatus::RateLimited)
                    fail(ErrorCode::RateLimited, "rate limited after " + std::to_string(rec.attempts) + " attempts");
                if (result.status == AttemptStatus::Timeout)
                    fail(ErrorCode::Timeout, "timed out after " + std::to_string(rec.attempts) + " attempts");
                fail(ErrorCode::BackendError, result.text);
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            delay = std::min(options.backoff_max_ms, delay * 2);
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Response parsing and sanitization

struct SanitizedLabel {
    std::string text;
    bool ambiguous = false;
};

inline constexpr std::size_t kMaxLabelLength = 60;

namespace label_detail {

inline bool is_quote(std::string_view s, std::size_t pos, std::size_t& width) {
    static constexpr std::string_view kMulti[] = {"\xE2\x80\x9C", "\xE2\x80\x9D", "\xE2\x80\x98", "\xE2\x80\x99"};
    const char c = s[pos];
    if (c == '"' || c == '\'' || c == '`') {
        width = 1;
        return true;
    }
    for (auto q : kMulti) {
        if (s.substr(pos, q.size()) == q) {
            width = q.size();
            return true;
        }
    }
    return false;
}

inline std::string strip_quotes(std::string_view s) {
    bool changed = true;
    while (changed && !s.empty()) {
        changed = false;
        s = text::trim(s);
        std::size_t w = 0;
        if (!s.empty() && is_quote(s, 0, w)) {
            s.remove_prefix(w);
            changed = true;
        }
        for (std::size_t back : {std::size_t{1}, std::size_t{3}}) {
            if (s.size() >= back && is_quote(s, s.size() - back, w) && w == back) {
                s.remove_suffix(back);
                changed = true;
                break;
            }
        }
    }
    return std::string(text::trim(s));
}

inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out.push_back(' ');
        space = false;
        out.push_back(c);
    }
    return out;
}

inline std::string truncate_words(std::string s, std::size_t limit) {
    if (s.size() <= limit) return s;
    std::size_t cut = s.rfind(' ', limit);
    if (cut == std::string::npos || cut == 0) {
        cut = limit;
        while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut; // UTF-8 boundary
    }
    s.resize(cut);
    return std::string(text::trim(s));
}

inline bool has_standalone_or(std::string_view s) {
    std::string token;
    auto check = [&] { return text::lower(token) == "or"; };
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token.push_back(c);
        } else {
            if (check()) return true;
            token.clear();
        }
    }
    return check();
}

} // namespace label_detail

/// Trims whitespace and surrounding quotes, collapses internal whitespace and truncates to 60
/// characters at a word boundary. A remaining standalone "or" marks the label ambiguous.
inline SanitizedLabel sanitize_label(std::string_view label) {
    std::string current(label);
    for (int pass = 0; pass < 8; ++pass) {
        auto next = label_detail::truncate_words(
            label_detail::collapse_whitespace(label_detail::strip_quotes(current)), kMaxLabelLength);
        if (next == current) break;
        current = std::move(next);
    }
    if (current.empty()) fail(ErrorCode::EmptyAfterSanitize, "label is empty after sanitization");
    return {current, label_detail::has_standalone_or(current)};
}

struct LabelProvenance {
    std::string model;
    double temperature = 0.0;
    std::string prompt_hash;
    int run_index = 0;
    std::string backend;
};

struct LabelMap {
    std::map<int, std::string> entries;
    std::set<int> ambiguous;
    LabelProvenance provenance;

    bool strict_ok() const { return ambiguous.empty(); }
};

inline nlohmann::json to_json(const LabelMap& m) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [id, label] : m.entries)
        entries.push_back({{"cluster_id", id}, {"label", label}, {"ambiguous", m.ambiguous.contains(id)}});
    return {{"entries", entries},
            {"provenance",
             {{"model", m.provenance.model},
              {"temperature", m.provenance.temperature},
              {"prompt_hash", m.provenance.prompt_hash},
              {"run_index", m.provenance.run_index},
              {"backend", m.provenance.backend}}}};
}

inline LabelMap label_map_from_json(const nlohmann::json& j) {
    LabelMap m;
    for (const auto& e : j.at("entries")) {
        const int id = e.at("cluster_id");
        m.entries[id] = e.at("label").get<std::string>();
        if (e.value("ambiguous", false)) m.ambiguous.insert(id);
    }
    if (j.contains("provenance")) {
        const auto& p = j.at("provenance");
        m.provenance = {p.value("model", ""), p.value("temperature", 0.0), p.value("prompt_hash", ""),
                        p.value("run_index", 0), p.value("backend", "")};
    }
    return m;
}

/// Canonical response lines, `cluster <id>: <label>`.
inline std::string render_label_lines(const LabelMap& m) {
    std::string out;
    for (const auto& [id, label] : m.entries) out += "cluster " + std::to_string(id) + ": " + label + "\n";
    return out;
}

/// Extracts `cluster <id>: <label>` lines, tolerating list markers and markdown emphasis.
inline LabelMap parse_label_response(std::string_view response, const std::vector<int>& expected_cluster_ids) {
    if (text::trim(response).empty()) fail(ErrorCode::UnparseableResponse, "empty response");
    static const std::regex kLine(R"(^\s*(?:[-*+]|\d+[.)])?\s*cluster\s*#?\s*(\d+)\s*[:=\-]\s*(.+?)\s*$)",
                                  std::regex::icase);
    LabelMap out;
    std::map<int, int> seen;
    bool any = false;
    for (auto line : text::split_lines(response)) {
        std::string cleaned;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '*' || line[i] == '`') continue;
            if (line[i] == '_' && i + 1 < line.size() && line[i + 1] == '_') {
                ++i;
                continue;
            }
            cleaned.push_back(line[i]);
        }
        // A leading list bullet was removed with the asterisks; strip dashes too.
        auto view = text::trim(cleaned);
        while (!view.empty() && (view.front() == '-' || view.front() == '+')) view = text::trim(view.substr(1));
        if (view.size() >= 3 && view.substr(0, 3) == "\xE2\x80\xA2") view = text::trim(view.substr(3));
        std::smatch m;
        const std::string candidate(view);
        if (!std::regex_match(candidate, m, kLine)) continue;
        any = true;
        const int id = std::stoi(m[1].str());
        if (++seen[id] > 1) fail(ErrorCode::DuplicateCluster, "cluster " + std::to_string(id) + " labelled twice");
        if (std::find(expected_cluster_ids.begin(), expected_cluster_ids.end(), id) == expected_cluster_ids.end())
            continue;
        auto clean = sanitize_label(m[2].str());
        out.entries[id] = clean.text;
        if (clean.ambiguous) out.ambiguous.insert(id);
    }
    if (!any) fail(ErrorCode::UnparseableResponse, "no `cluster <id>: <label>` lines found");
    for (int id : expected_cluster_ids)
        if (!out.entries.contains(id)) fail(ErrorCode::MissingCluster, "cluster " + std::to_string(id) + " has no label");
    return out;
}

inline std::vector<int> labelable_clusters(const std::vector<ClusterProfile>& profiles) {
    std::vector<int> ids;
    for (const auto& p : profiles)
        if (p.cluster_id != kNoiseLabel) ids.push_back(p.cluster_id);
    return ids;
}

// ---------------------------------------------------------------------------
// Offline mock backend

/// A reference activity for the mock backend: typical channel means plus naming variants a
/// model might produce instead of the canonical label.
struct MockPrototype {
    std::string label;
    std::map<std::string, double> channel_means;
    std::vector<std::string> variants;
};

/// Deterministic stand-in for a language model. It reads the profiles embedded in the prompt and
/// names each cluster after the nearest prototype (channel-range scaled distance on means).
/// Temperature, the run seed and the prompt tier perturb naming: higher temperature and less
/// guidance make variant names, and for unguided prompts "X or Y" answers, more likely.
class MockBackend : public LlmBackend {
public:
    explicit MockBackend(std::vector<MockPrototype> table) : table_(std::move(table)) {}

    /// Always answers with `canned` verbatim.
    static MockBackend canned(std::string canned_text) {
        MockBackend b({});
        b.canned_ = std::move(canned_text);
        return b;
    }

    std::string name() const override { return "mock"; }

    AttemptResult attempt(const std::string& prompt, const LlmOptions& options) override {
        if (canned_) return {AttemptStatus::Ok, 200, *canned_, std::nullopt, std::nullopt};
        const auto open = prompt.find(prompt_blocks::kProfilesOpen);
        const auto close = open == std::string::npos
                               ? std::string::npos
                               : prompt.find(prompt_blocks::kProfilesClose, open + prompt_blocks::kProfilesOpen.size());
        if (close == std::string::npos) return {AttemptStatus::Malformed, 400, "prompt has no profiles block", {}, {}};
        const auto body = prompt.substr(open + prompt_blocks::kProfilesOpen.size(),
                                        close - open - prompt_blocks::kProfilesOpen.size());
        auto parsed = nlohmann::json::parse(body, nullptr, false);
        if (parsed.is_discarded()) return {AttemptStatus::Malformed, 400, "profiles block is not JSON", {}, {}};
        const auto profiles = profiles_from_json(parsed);

        const bool instructed = prompt.find("Labeling instructions:") != std::string::npos;
        const bool contextual = prompt.find("Operational context:") != std::string::npos;
        const double variant_rate = contextual ? 0.3 : instructed ? 0.6 : 0.9;
        const double ambiguity_rate = instructed ? 0.0 : 0.25;

        std::string reply;
        for (const auto& p : profiles) {
            const auto ranked = rank_prototypes(p);
            SplitRng rng(options.seed * 0x9E3779B97F4A7C15ULL ^ text::fnv1a(prompt) ^
                         (static_cast<std::uint64_t>(p.cluster_id) + 1) * 0xBF58476D1CE4E5B9ULL);
            std::string label = ranked.empty() ? "Activity " + std::to_string(p.cluster_id) : table_[ranked[0]].label;
            if (!ranked.empty()) {
                const auto& proto = table_[ranked[0]];
                const double u = rng.uniform();
                if (!proto.variants.empty() && u < options.temperature * variant_rate)
                    label = proto.variants[rng.index(proto.variants.size())];
                if (ranked.size() > 1 && rng.uniform() < options.temperature * ambiguity_rate)
                    label += " or " + table_[ranked[1]].label;
            }
            reply += "cluster " + std::to_string(p.cluster_id) + ": " + label + "\n";
        }
        return {AttemptStatus::Ok, 200, reply, static_cast<long long>(prompt.size() / 4),
                static_cast<long long>(reply.size() / 4)};
    }

private:
    std::vector<std::size_t> rank_prototypes(const ClusterProfile& p) const {
        std::map<std::string, std::pair<double, double>> range;
        for (const auto& proto : table_) {
            for (const auto& [ch, v] : proto.channel_means) {
                auto [it, fresh] = range.emplace(ch, std::make_pair(v, v));
                if (!fresh) {
                    it->second.first = std::min(it->second.first, v);
                    it->second.second = std::max(it->second.second, v);
                }
            }
        }
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t i = 0; i < table_.size(); ++i) {
            double d = 0.0;
            std::size_t shared = 0;
            for (const auto& [name, s] : p.stats) {
                auto it = table_[i].channel_means.find(name);
                if (it == table_[i].channel_means.end()) continue;
                const auto [lo, hi] = range[name];
                const double scale = hi > lo ? hi - lo : 1.0;
                d += std::pow((s.mean - it->second) / scale, 2);
                ++shared;
            }
            if (shared) scored.emplace_back(d, i);
        }
        std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first < b.first; });
        std::vector<std::size_t> out;
        for (auto& s : scored) out.push_back(s.second);
        return out;
    }

    std::vector<MockPrototype> table_;
    std::optional<std::string> canned_;
};

/// Builds the prompt, requests a completion and parses it into a label map.
inline LabelMap label_clusters(const std::vector<ClusterProfile>& profiles, const PromptTier& tier,
                               const LlmOptions& options, LlmBackend& backend, int run_index = 0,
                               CallRecord* record = nullptr, const PromptPool& pool = {},
                               std::string* raw_response = nullptr) {
    const auto prompt = build_prompt(profiles, tier, pool);
    const auto response = request_labels(prompt, options, backend, record);
    if (raw_response) *raw_response = response;
    auto map = parse_label_response(response, labelable_clusters(profiles));
    map.provenance = {options.model, options.temperature, prompt_hash(prompt), run_index, backend.name()};
    return map;
}

} // namespace iotminer
