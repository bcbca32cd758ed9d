#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotminer/clustering.hpp"
#include "iotminer/error.hpp"
#include "iotminer/evaluation.hpp"
#include "iotminer/eventlog.hpp"
#include "iotminer/featurization.hpp"
#include "iotminer/ingestion.hpp"
#include "iotminer/labeling.hpp"
#include "iotminer/profiling.hpp"
#include "iotminer/synthgen.hpp"
#include "iotminer/text.hpp"

namespace iotminer {

inline constexpr std::string_view kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Configuration

struct IngestionSettings {
    std::string input;                 ///< sensor export; empty when synthesizing
    bool synthesize = false;
    DutyCycleSpec synth_spec = default_duty_cycle();
    std::optional<char> delimiter;
    std::string timestamp_column;
    InterpolationPolicy interpolation;
    double min_variation = 0.0;
    std::vector<std::string> channels; ///< explicit sensor selection; empty = automatic
    bool deduplicate_timestamps = false;
};

struct ClusteringSettings {
    std::vector<ClusteringConfig> search_space; ///< empty = default grid
    std::uint64_t seed = 42;
    std::size_t threads = 0;
    std::size_t silhouette_max_rows = kSilhouetteExactLimit;
    std::size_t projection_dims = 2;
};

struct LabelingSettings {
    PromptTier tier;
    LlmOptions llm;
    std::string backend = "mock"; ///< mock | http
    std::string prompt_dir;       ///< optional tier1.txt..tier3.txt overrides
    std::string mock_prototypes;  ///< optional JSON file of prototypes for the mock backend
    bool strict = false;          ///< reject label maps containing ambiguous "X or Y" labels
};

struct EvaluationSettings {
    std::string truth; ///< CSV with timestamp and activity columns; synthesized data supplies its own
    double threshold = kDefaultSwaThreshold;
    std::string provider = "lexical"; ///< lexical | embedding
    std::string embedding_endpoint = "https://api.openai.com/v1/embeddings";
    std::string embedding_model = "text-embedding-3-small";
};

struct ResumeSettings {
    std::string frame, features, assignment, profiles, labels;
};

struct SweepSettings {
    std::vector<int> tiers{1, 2, 3};
    std::vector<double> temperatures{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    int runs_per_cell = 10;
    std::size_t concurrency = 0; ///< 0 = hardware concurrency
};

struct PipelineConfig {
    IngestionSettings ingestion;
    FeatureSpec features;              ///< base_channels empty = selected sensors
    ClusteringSettings clustering;
    LabelingSettings labeling;
    SegmentationConfig segmentation;
    EvaluationSettings evaluation;
    ResumeSettings resume;
    SweepSettings sweep;
    std::filesystem::path output_dir = "iotminer_out";

    /// Checks every sub-configuration and referenced input path. Nothing is written.
    void validate() const {
        auto exists = [](const std::string& path, const char* what) {
            if (!path.empty() && !std::filesystem::exists(path))
                fail(ErrorCode::InvalidConfig, std::string(what) + " '" + path + "' does not exist");
        };
        if (!ingestion.synthesize && ingestion.input.empty() && resume.frame.empty())
            fail(ErrorCode::InvalidConfig, "ingestion.input is required unless synthesizing or resuming");
        exists(ingestion.input, "ingestion.input");
        if (ingestion.synthesize) ingestion.synth_spec.validate();
        if (!(ingestion.interpolation.max_gap >= 1)) fail(ErrorCode::InvalidConfig, "ingestion.interpolation.max_gap must be >= 1");
        if (!(ingestion.min_variation >= 0)) fail(ErrorCode::InvalidConfig, "ingestion.min_variation must be >= 0");
        if (!features.base_channels.empty()) features.validate();
        else if (features.window < 1) fail(ErrorCode::InvalidConfig, "features.window must be >= 1");
        for (const auto& c : clustering.search_space) c.validate();
        if (clustering.projection_dims != 2 && clustering.projection_dims != 3)
            fail(ErrorCode::InvalidConfig, "clustering.projection_dims must be 2 or 3");
        if (labeling.tier.tier < 1 || labeling.tier.tier > 3) fail(ErrorCode::InvalidConfig, "labeling.tier must be 1, 2 or 3");
        labeling.tier.validate();
        labeling.llm.validate();
        if (labeling.backend != "mock" && labeling.backend != "http")
            fail(ErrorCode::InvalidConfig, "labeling.backend must be mock or http");
        exists(labeling.prompt_dir, "labeling.prompt_dir");
        exists(labeling.mock_prototypes, "labeling.mock_prototypes");
        segmentation.validate();
        exists(evaluation.truth, "evaluation.truth");
        if (!(evaluation.threshold >= 0 && evaluation.threshold <= 1))
            fail(ErrorCode::InvalidConfig, "evaluation.threshold must lie in [0, 1]");
        if (evaluation.provider != "lexical" && evaluation.provider != "embedding")
            fail(ErrorCode::InvalidConfig, "evaluation.provider must be lexical or embedding");
        exists(resume.frame, "resume.frame");
        exists(resume.features, "resume.features");
        exists(resume.assignment, "resume.assignment");
        exists(resume.profiles, "resume.profiles");
        exists(resume.labels, "resume.labels");
    }

    /// Sweep-only checks, on top of validate().
    void validate_sweep() const {
        validate();
        if (sweep.runs_per_cell < 1) fail(ErrorCode::InvalidConfig, "sweep.runs_per_cell must be >= 1");
        for (int t : sweep.tiers) {
            if (t < 1 || t > 3) fail(ErrorCode::InvalidConfig, "sweep.tiers entries must be 1, 2 or 3");
            if (t == 3 && labeling.tier.user_context.empty())
                fail(ErrorCode::MissingContext, "sweep includes tier 3 but labeling.user_context is empty");
        }
        for (double t : sweep.temperatures)
            if (!(t >= 0 && t <= 1)) fail(ErrorCode::InvalidConfig, "sweep.temperatures must lie in [0, 1]");
    }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json space = nlohmann::json::array();
    for (const auto& s : c.clustering.search_space) space.push_back(to_json(s));
    nlohmann::json overrides = nlohmann::json::object();
    for (const auto& [ch, m] : c.ingestion.interpolation.per_channel_overrides) overrides[ch] = std::string(to_string(m));
    return {
        {"ingestion",
         {{"input", c.ingestion.input},
          {"synthesize", c.ingestion.synthesize},
          {"synth_spec", to_json(c.ingestion.synth_spec)},
          {"delimiter", c.ingestion.delimiter ? nlohmann::json(std::string(1, *c.ingestion.delimiter)) : nlohmann::json(nullptr)},
          {"timestamp_column", c.ingestion.timestamp_column},
          {"interpolation",
           {{"method", std::string(to_string(c.ingestion.interpolation.method))},
            {"max_gap", c.ingestion.interpolation.max_gap},
            {"per_channel", overrides}}},
          {"min_variation", c.ingestion.min_variation},
          {"channels", c.ingestion.channels},
          {"deduplicate_timestamps", c.ingestion.deduplicate_timestamps}}},
        {"features", to_json(c.features)},
        {"clustering",
         {{"search_space", space},
          {"seed", c.clustering.seed},
          {"threads", c.clustering.threads},
          {"silhouette_max_rows", c.clustering.silhouette_max_rows},
          {"projection_dims", c.clustering.projection_dims}}},
        {"labeling",
         {{"tier", c.labeling.tier.tier},
          {"user_context", c.labeling.tier.user_context},
          {"backend", c.labeling.backend},
          {"model", c.labeling.llm.model},
          {"temperature", c.labeling.llm.temperature},
          {"max_tokens", c.labeling.llm.max_tokens},
          {"endpoint", c.labeling.llm.endpoint},
          {"credential_env", c.labeling.llm.credential_env},
          {"timeout_seconds", c.labeling.llm.timeout_seconds},
          {"retries", c.labeling.llm.retries},
          {"backoff_initial_ms", c.labeling.llm.backoff_initial_ms},
          {"backoff_max_ms", c.labeling.llm.backoff_max_ms},
          {"seed", c.labeling.llm.seed},
          {"prompt_dir", c.labeling.prompt_dir},
          {"mock_prototypes", c.labeling.mock_prototypes},
          {"strict", c.labeling.strict}}},
        {"segmentation", to_json(c.segmentation)},
        {"evaluation",
         {{"truth", c.evaluation.truth},
          {"threshold", c.evaluation.threshold},
          {"provider", c.evaluation.provider},
          {"embedding_endpoint", c.evaluation.embedding_endpoint},
          {"embedding_model", c.evaluation.embedding_model}}},
        {"resume",
         {{"frame", c.resume.frame},
          {"features", c.resume.features},
          {"assignment", c.resume.assignment},
          {"profiles", c.resume.profiles},
          {"labels", c.resume.labels}}},
        {"sweep",
         {{"tiers", c.sweep.tiers},
          {"temperatures", c.sweep.temperatures},
          {"runs_per_cell", c.sweep.runs_per_cell},
          {"concurrency", c.sweep.concurrency}}},
        {"output_dir", c.output_dir.string()},
    };
}

/// Missing keys keep their defaults. Structural problems raise InvalidConfig.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        if (auto it = j.find("ingestion"); it != j.end()) {
            const auto& s = *it;
            c.ingestion.input = s.value("input", std::string{});
            if (s.contains("synth_spec") && !s["synth_spec"].is_null()) {
                c.ingestion.synth_spec = s["synth_spec"].is_string() && s["synth_spec"] == "default"
                                             ? default_duty_cycle()
                                             : duty_cycle_from_json(s["synth_spec"]);
            }
            c.ingestion.synthesize = s.value("synthesize", false);
            if (s.contains("delimiter") && s["delimiter"].is_string()) {
                const auto d = s["delimiter"].get<std::string>();
                if (d == "\\t" || d == "tab") c.ingestion.delimiter = '\t';
                else if (d.size() == 1) c.ingestion.delimiter = d[0];
                else fail(ErrorCode::InvalidConfig, "ingestion.delimiter must be a single character");
            }
            c.ingestion.timestamp_column = s.value("timestamp_column", std::string{});
            if (auto ip = s.find("interpolation"); ip != s.end()) {
                c.ingestion.interpolation.method = parse_interpolation_method(ip->value("method", std::string("linear")));
                c.ingestion.interpolation.max_gap = ip->value("max_gap", c.ingestion.interpolation.max_gap);
                if (auto pc = ip->find("per_channel"); pc != ip->end())
                    for (auto e = pc->begin(); e != pc->end(); ++e)
                        c.ingestion.interpolation.per_channel_overrides[e.key()] = parse_interpolation_method(e.value().get<std::string>());
            }
            c.ingestion.min_variation = s.value("min_variation", 0.0);
            c.ingestion.channels = s.value("channels", std::vector<std::string>{});
            c.ingestion.deduplicate_timestamps = s.value("deduplicate_timestamps", false);
        }
        if (j.contains("features")) c.features = feature_spec_from_json(j["features"]);
        if (auto it = j.find("clustering"); it != j.end()) {
            const auto& s = *it;
            c.clustering.seed = s.value("seed", std::uint64_t{42});
            if (s.contains("search_space") && s["search_space"].is_array()) {
                c.clustering.search_space = search_space_from_json(s["search_space"]);
                for (std::size_t i = 0; i < c.clustering.search_space.size(); ++i)
                    if (!s["search_space"][i].contains("seed")) c.clustering.search_space[i].seed = c.clustering.seed;
            }
            c.clustering.threads = s.value("threads", std::size_t{0});
            c.clustering.silhouette_max_rows = s.value("silhouette_max_rows", kSilhouetteExactLimit);
            c.clustering.projection_dims = s.value("projection_dims", std::size_t{2});
        }
        if (auto it = j.find("labeling"); it != j.end()) {
            const auto& s = *it;
            c.labeling.tier.tier = s.value("tier", 1);
            c.labeling.tier.user_context = s.value("user_context", std::string{});
            if (s.contains("user_context_file") && s["user_context_file"].is_string() &&
                !s["user_context_file"].get<std::string>().empty())
                c.labeling.tier.user_context = text::read_file(s["user_context_file"].get<std::string>());
            c.labeling.backend = s.value("backend", std::string("mock"));
            auto& o = c.labeling.llm;
            o.model = s.value("model", o.model);
            o.temperature = s.value("temperature", o.temperature);
            o.max_tokens = s.value("max_tokens", o.max_tokens);
            o.endpoint = s.value("endpoint", o.endpoint);
            o.credential_env = s.value("credential_env", o.credential_env);
            o.timeout_seconds = s.value("timeout_seconds", o.timeout_seconds);
            o.retries = s.value("retries", o.retries);
            o.backoff_initial_ms = s.value("backoff_initial_ms", o.backoff_initial_ms);
            o.backoff_max_ms = s.value("backoff_max_ms", o.backoff_max_ms);
            o.seed = s.value("seed", o.seed);
            c.labeling.prompt_dir = s.value("prompt_dir", std::string{});
            c.labeling.mock_prototypes = s.value("mock_prototypes", std::string{});
            c.labeling.strict = s.value("strict", false);
        }
        if (j.contains("segmentation")) {
            std::vector<FieldError> errs;
            c.segmentation = segmentation_config_from_json(j["segmentation"], &errs);
            if (!errs.empty()) fail(ErrorCode::InvalidConfig, "segmentation." + errs.front().field + ": " + errs.front().message);
        }
        if (auto it = j.find("evaluation"); it != j.end()) {
            const auto& s = *it;
            c.evaluation.truth = s.value("truth", std::string{});
            c.evaluation.threshold = s.value("threshold", kDefaultSwaThreshold);
            c.evaluation.provider = s.value("provider", std::string("lexical"));
            c.evaluation.embedding_endpoint = s.value("embedding_endpoint", c.evaluation.embedding_endpoint);
            c.evaluation.embedding_model = s.value("embedding_model", c.evaluation.embedding_model);
        }
        if (auto it = j.find("resume"); it != j.end()) {
            const auto& s = *it;
            c.resume = {s.value("frame", std::string{}), s.value("features", std::string{}), s.value("assignment", std::string{}),
                        s.value("profiles", std::string{}), s.value("labels", std::string{})};
        }
        if (auto it = j.find("sweep"); it != j.end()) {
            const auto& s = *it;
            c.sweep.tiers = s.value("tiers", c.sweep.tiers);
            c.sweep.temperatures = s.value("temperatures", c.sweep.temperatures);
            c.sweep.runs_per_cell = s.value("runs_per_cell", c.sweep.runs_per_cell);
            c.sweep.concurrency = s.value("concurrency", c.sweep.concurrency);
        }
        if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
    }
    return c;
}

/// Hash of the configuration without its output and resume locations, so relocating a run does
/// not change the content address of its artifacts.
inline std::string config_hash(const PipelineConfig& c) {
    auto j = to_json(c);
    j.erase("output_dir");
    j.erase("resume");
    return text::hex64(text::fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------
// Run manifest

struct StageRecord {
    std::string name;
    std::string status; ///< ran | resumed | skipped | failed
    double seconds = 0.0;
    std::string detail;
};

/// Reproducibility record. Entries are appended during a run; the file is written once,
/// atomically, when the run ends.
struct RunManifest {
    std::string tool_version = std::string(kToolVersion);
    std::string config_hash;
    std::string created_at;
    std::string status = "running";
    nlohmann::json seeds = nlohmann::json::object();
    std::vector<StageRecord> stages;
    std::vector<CallRecord> calls;
    std::map<std::string, std::string> artifacts; ///< name -> path relative to the output dir
    std::vector<std::string> warnings;
    nlohmann::json mutations = nlohmann::json::array();
    int version = 1;
    std::string error;

    bool resumed(std::string_view stage) const {
        return std::any_of(stages.begin(), stages.end(), [&](const auto& s) { return s.name == stage && s.status == "resumed"; });
    }
};

inline nlohmann::json to_json(const RunManifest& m) {
    auto stages = nlohmann::json::array();
    for (const auto& s : m.stages)
        stages.push_back({{"name", s.name}, {"status", s.status}, {"seconds", s.seconds}, {"detail", s.detail}});
    auto calls = nlohmann::json::array();
    for (const auto& c : m.calls) calls.push_back(to_json(c));
    return {{"tool_version", m.tool_version}, {"config_hash", m.config_hash}, {"created_at", m.created_at},
            {"status", m.status},             {"seeds", m.seeds},             {"stages", stages},
            {"backend_calls", calls},         {"artifacts", m.artifacts},     {"warnings", m.warnings},
            {"mutations", m.mutations},       {"version", m.version},         {"error", m.error}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    m.tool_version = j.value("tool_version", m.tool_version);
    m.config_hash = j.value("config_hash", std::string{});
    m.created_at = j.value("created_at", std::string{});
    m.status = j.value("status", std::string{});
    m.seeds = j.value("seeds", nlohmann::json::object());
    for (const auto& s : j.value("stages", nlohmann::json::array()))
        m.stages.push_back({s.value("name", ""), s.value("status", ""), s.value("seconds", 0.0), s.value("detail", "")});
    for (const auto& c : j.value("backend_calls", nlohmann::json::array())) {
        CallRecord r;
        r.backend = c.value("backend", "");
        r.model = c.value("model", "");
        r.temperature = c.value("temperature", 0.0);
        r.attempts = c.value("attempts", 0);
        r.http_statuses = c.value("http_statuses", std::vector<int>{});
        r.latency_ms = c.value("latency_ms", 0.0);
        r.prompt_hash = c.value("prompt_hash", "");
        if (c.contains("prompt_tokens") && c["prompt_tokens"].is_number()) r.prompt_tokens = c["prompt_tokens"].get<long long>();
        if (c.contains("completion_tokens") && c["completion_tokens"].is_number())
            r.completion_tokens = c["completion_tokens"].get<long long>();
        m.calls.push_back(std::move(r));
    }
    m.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
    m.warnings = j.value("warnings", std::vector<std::string>{});
    m.mutations = j.value("mutations", nlohmann::json::array());
    m.version = j.value("version", 1);
    m.error = j.value("error", std::string{});
    return m;
}

inline std::string utc_now_iso() {
    return format_iso_millis(std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now()));
}

// ---------------------------------------------------------------------------
// Stage helpers

/// Writes `contents` under `dir` and registers it in the manifest.
inline void emit_artifact(RunManifest& m, const std::filesystem::path& dir, const std::string& name,
                          const std::string& file, std::string_view contents) {
    text::write_file_atomic(dir / file, contents);
    m.artifacts[name] = file;
}

/// Runs `body` as the named stage, timing it and prefixing errors with the stage name.
template <class F>
void run_stage(RunManifest& m, const std::string& name, bool resumed, F&& body) {
    const auto started = std::chrono::steady_clock::now();
    StageRecord rec{name, resumed ? "resumed" : "ran", 0.0, {}};
    try {
        body(rec);
    } catch (const Error& e) {
        rec.status = "failed";
        rec.detail = e.what();
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        m.stages.push_back(rec);
        throw Error(e.code(), "stage '" + name + "': " + e.what());
    } catch (const std::exception& e) {
        rec.status = "failed";
        rec.detail = e.what();
        m.stages.push_back(rec);
        throw Error(ErrorCode::IoError, "stage '" + name + "': " + e.what());
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    m.stages.push_back(rec);
}

inline std::vector<MockPrototype> prototypes_from_json(const nlohmann::json& j) {
    std::vector<MockPrototype> out;
    for (const auto& p : j) {
        MockPrototype m;
        m.label = p.at("label").get<std::string>();
        m.channel_means = p.at("channel_means").get<std::map<std::string, double>>();
        m.variants = p.value("variants", std::vector<std::string>{});
        out.push_back(std::move(m));
    }
    return out;
}

/// Mock prototypes: an explicit file wins, otherwise the (synthetic or default) duty-cycle modes.
inline std::vector<MockPrototype> resolve_prototypes(const PipelineConfig& c) {
    if (!c.labeling.mock_prototypes.empty())
        return prototypes_from_json(nlohmann::json::parse(text::read_file(c.labeling.mock_prototypes)));
    return mock_prototypes(c.ingestion.synth_spec);
}

/// Creates the configured backend. The HTTP backend lives in a separate header to keep
/// cpp-httplib out of translation units that do not need it; callers register a factory.
using BackendFactory = std::function<std::unique_ptr<LlmBackend>(const PipelineConfig&)>;

inline std::unique_ptr<LlmBackend> make_mock_backend(const PipelineConfig& c) {
    return std::make_unique<MockBackend>(resolve_prototypes(c));
}

inline PromptPool resolve_prompt_pool(const LabelingSettings& s) {
    return s.prompt_dir.empty() ? PromptPool{} : PromptPool::from_directory(s.prompt_dir);
}

/// Sensor channels used downstream: configured ones, else automatic selection.
inline std::vector<std::string> resolve_channels(const SensorFrame& frame, const IngestionSettings& s) {
    if (!s.channels.empty()) {
        for (const auto& ch : s.channels) (void)frame.at(ch);
        return s.channels;
    }
    return select_sensor_columns(frame, s.min_variation);
}

struct PreparedData {
    SensorFrame frame;                  ///< repaired, complete rows only
    std::vector<std::string> channels;  ///< selected sensor channels
    FeatureMatrix features;             ///< un-normalized
    std::vector<ClusteringResult> ranked;
    ClusterAssignment assignment;
    std::vector<ClusterProfile> profiles;
    std::string truth_csv;              ///< empty when no ground truth is available
    std::string source;                 ///< provenance string for the event log
};

/// Ingest, featurize, cluster and profile, honouring resume paths. Artifacts are written under
/// `dir` and registered in `m`.
inline PreparedData prepare(const PipelineConfig& c, const std::filesystem::path& dir, RunManifest& m) {
    PreparedData d;
    run_stage(m, "ingest", !c.resume.frame.empty(), [&](StageRecord& rec) {
        if (!c.resume.frame.empty()) {
            d.frame = load_file(c.resume.frame, ',', "timestamp");
            d.source = c.resume.frame;
            rec.detail = "frame from " + c.resume.frame;
            if (c.ingestion.synthesize) {
                // Synthetic truth is reproducible from the spec alone.
                d.truth_csv = write_truth_csv(generate(c.ingestion.synth_spec));
            }
        } else {
            SensorFrame raw;
            if (c.ingestion.synthesize) {
                auto data = generate(c.ingestion.synth_spec);
                d.truth_csv = write_truth_csv(data);
                emit_artifact(m, dir, "synthetic_input", "synthetic_input.csv", write_frame_csv(data.frame));
                emit_artifact(m, dir, "truth", "truth.csv", d.truth_csv);
                raw = std::move(data.frame);
                d.source = "synthgen:seed=" + std::to_string(c.ingestion.synth_spec.seed);
            } else {
                raw = load_file(c.ingestion.input, c.ingestion.delimiter,
                                c.ingestion.timestamp_column.empty() ? std::nullopt
                                                                     : std::optional<std::string>(c.ingestion.timestamp_column),
                                nullptr, LoadOptions{c.ingestion.deduplicate_timestamps});
                d.source = c.ingestion.input;
            }
            auto repaired = interpolate_missing(raw, c.ingestion.interpolation);
            const auto channels = resolve_channels(repaired.frame, c.ingestion);
            const auto keep = complete_rows(repaired.frame, channels);
            const std::size_t dropped = repaired.frame.rows() - keep.size();
            d.frame = keep.size() == repaired.frame.rows() ? std::move(repaired.frame) : repaired.frame.select_rows(keep);
            auto summary = nlohmann::json{{"gaps", repair_summary_json(repaired.unrepaired)},
                                          {"incomplete_rows_dropped", dropped},
                                          {"rows", d.frame.rows()}};
            emit_artifact(m, dir, "repair_summary", "repair_summary.json", summary.dump(2) + "\n");
            if (dropped) m.warnings.push_back(std::to_string(dropped) + " rows with unrepaired gaps were excluded");
            emit_artifact(m, dir, "frame", "frame.csv", write_frame_csv(d.frame));
        }
        if (!c.evaluation.truth.empty()) d.truth_csv = text::read_file(c.evaluation.truth);
        d.channels = resolve_channels(d.frame, c.ingestion);
    });

    run_stage(m, "featurize", !c.resume.features.empty(), [&](StageRecord&) {
        if (!c.resume.features.empty()) {
            std::filesystem::path sidecar_path = c.resume.features;
            sidecar_path.replace_extension(".json");
            if (std::filesystem::exists(sidecar_path)) {
                const auto sidecar = nlohmann::json::parse(text::read_file(sidecar_path));
                d.features = read_feature_csv(text::read_file(c.resume.features), &sidecar);
            } else {
                d.features = read_feature_csv(text::read_file(c.resume.features));
            }
            return;
        }
        FeatureSpec spec = c.features;
        if (spec.base_channels.empty()) spec.base_channels = d.channels;
        d.features = build_feature_matrix(d.frame, spec);
        emit_artifact(m, dir, "features", "features.csv", write_feature_csv(d.features));
        emit_artifact(m, dir, "features_sidecar", "features.json", feature_sidecar(d.features).dump(2) + "\n");
    });

    run_stage(m, "cluster", !c.resume.assignment.empty(), [&](StageRecord& rec) {
        if (!c.resume.assignment.empty()) {
            d.assignment = read_assignment_csv(text::read_file(c.resume.assignment));
            if (d.assignment.labels.size() != d.frame.rows())
                fail(ErrorCode::LengthMismatch, "resumed assignment does not match the frame row count");
            rec.detail = "assignment from " + c.resume.assignment;
            return;
        }
        if (d.features.rows.rows() != d.frame.rows())
            fail(ErrorCode::LengthMismatch, "feature rows do not match the frame row count");
        auto space = c.clustering.search_space.empty() ? default_search_space(d.features.rows, c.clustering.seed)
                                                       : c.clustering.search_space;
        GridOptions opt;
        opt.threads = c.clustering.threads;
        opt.silhouette_max_rows = c.clustering.silhouette_max_rows;
        d.ranked = grid_search(d.features.rows, space, opt);
        d.assignment = d.ranked.front().assignment;
        rec.detail = to_json(d.ranked.front().config).dump();
        emit_artifact(m, dir, "cluster_results", "cluster_results.json", results_to_json(d.ranked).dump(2) + "\n");
        emit_artifact(m, dir, "assignment", "assignment.csv", write_assignment_csv(d.assignment, d.frame.timestamps));
        const auto& winner = d.ranked.front().config;
        const auto x = apply_normalizer(d.features.rows, fit_normalizer(d.features.rows, winner.normalization));
        if (x.rows() >= c.clustering.projection_dims && x.cols() >= c.clustering.projection_dims) {
            const auto proj = pca_project(x, c.clustering.projection_dims);
            emit_artifact(m, dir, "projection", "projection.csv", write_projection_csv(proj, d.assignment));
        }
    });

    run_stage(m, "profile", !c.resume.profiles.empty(), [&](StageRecord&) {
        if (!c.resume.profiles.empty()) {
            d.profiles = profiles_from_json(nlohmann::json::parse(text::read_file(c.resume.profiles)));
            return;
        }
        d.profiles = cluster_profiles(d.frame, d.channels, d.assignment);
        emit_artifact(m, dir, "profiles", "profiles.json", profiles_to_json(d.profiles).dump(2) + "\n");
    });
    return d;
}

/// Reference activity per frame row, joined on timestamp. Rows without truth get "".
inline std::vector<std::string> align_truth(const SensorFrame& frame, const std::string& truth_csv) {
    std::vector<std::string> out(frame.rows());
    if (truth_csv.empty()) return out;
    std::string pred = "timestamp,activity\n";
    std::map<std::string, std::size_t> row_of;
    for (std::size_t r = 0; r < frame.rows(); ++r) row_of.emplace(format_iso_millis(frame.timestamps[r]), r);
    const auto lines = text::split_lines(truth_csv);
    if (lines.empty()) return out;
    const auto header = text::split_record(lines[0], ',');
    std::optional<std::size_t> ts, act;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto h = text::trim(header[i]);
        if (h == "timestamp") ts = i;
        if (h == "activity" || (!act && (h == "reference" || h == "label"))) act = i;
    }
    if (!ts || !act) fail(ErrorCode::InvalidConfig, "truth file needs timestamp and activity columns");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty()) continue;
        const auto f = text::split_record(lines[i], ',');
        if (f.size() != header.size()) fail(ErrorCode::RaggedRow, "truth line " + std::to_string(i + 1) + " is ragged");
        auto it = row_of.find(format_iso_millis(parse_instant_or_throw(f[*ts])));
        if (it != row_of.end()) out[it->second] = f[*act];
    }
    return out;
}

inline std::vector<LabeledInstance> timeline_instances(const Timeline& timeline, const std::vector<std::string>& reference) {
    std::vector<LabeledInstance> out;
    out.reserve(timeline.size());
    for (const auto& e : timeline)
        if (e.row < reference.size() && !reference[e.row].empty()) out.push_back({e.activity, reference[e.row]});
    return out;
}

inline std::unique_ptr<SimilarityProvider> make_lexical_provider() { return std::make_unique<LexicalSimilarity>(); }

/// Factory for the similarity provider; the embedding provider is registered by callers that
/// link the HTTP client.
using ProviderFactory = std::function<std::unique_ptr<SimilarityProvider>(const EvaluationSettings&)>;

struct Backends {
    BackendFactory llm;          ///< unset: mock unless labeling.backend = http
    ProviderFactory similarity;  ///< unset: lexical unless evaluation.provider = embedding
};

inline std::unique_ptr<LlmBackend> resolve_backend(const PipelineConfig& c, const Backends& b) {
    if (b.llm) return b.llm(c);
    if (c.labeling.backend == "mock") return make_mock_backend(c);
    fail(ErrorCode::InvalidConfig, "labeling backend '" + c.labeling.backend + "' is not available in this build");
}

inline std::unique_ptr<SimilarityProvider> resolve_provider(const EvaluationSettings& s, const Backends& b) {
    if (b.similarity) return b.similarity(s);
    if (s.provider == "lexical") return make_lexical_provider();
    fail(ErrorCode::InvalidConfig, "similarity provider '" + s.provider + "' is not available in this build");
}

/// Timeline, segmentation and serialized logs for one label map.
struct BuiltLog {
    Timeline timeline;
    Segmentation segmentation;
    EventLog log;
};

inline BuiltLog build_log(const SensorFrame& frame, const ClusterAssignment& assignment, const LabelMap& labels,
                          const SegmentationConfig& seg, const std::vector<std::pair<std::string, std::string>>& attributes) {
    BuiltLog b;
    const std::string change = seg.method == SegmentationMethod::SensorChange ? seg.change_channel : std::string{};
    b.timeline = labeled_timeline(frame, assignment, labels, change);
    b.segmentation = segment_cases(b.timeline, seg);
    b.log.cases = b.segmentation.cases;
    b.log.attributes = attributes;
    return b;
}

inline void write_log_artifacts(RunManifest& m, const std::filesystem::path& dir, const BuiltLog& b,
                                const SegmentationConfig& seg) {
    emit_artifact(m, dir, "timeline", "timeline.csv",
                  write_timeline_csv(b.timeline, seg.method == SegmentationMethod::SensorChange ? seg.change_channel : ""));
    emit_artifact(m, dir, "event_log_xes", "event_log.xes", to_xes(b.log));
    emit_artifact(m, dir, "event_log_csv", "event_log.csv", to_csv(b.log));
    emit_artifact(m, dir, "drop_report", "drop_report.json", drop_report_json(b.segmentation.dropped).dump(2) + "\n");
}

/// Scores a timeline against row-aligned references and writes the report and alignment matrix.
inline std::optional<SwaResult> evaluate_timeline(RunManifest& m, const std::filesystem::path& dir, const Timeline& timeline,
                                                  const std::vector<std::string>& reference, const EvaluationSettings& s,
                                                  SimilarityProvider& provider) {
    const auto instances = timeline_instances(timeline, reference);
    if (instances.empty()) return std::nullopt;
    auto result = swa(instances, s.threshold, provider);
    emit_artifact(m, dir, "evaluation_report", "evaluation_report.json",
                  evaluation_report_json(instances, result, provider.name()).dump(2) + "\n");
    const auto matrix = alignment_matrix(instances, provider);
    emit_artifact(m, dir, "alignment_csv", "alignment.csv", alignment_csv(matrix));
    emit_artifact(m, dir, "alignment_json", "alignment.json", to_json(matrix).dump(2) + "\n");
    return result;
}

inline void write_manifest(const RunManifest& m, const std::filesystem::path& dir) {
    text::write_file_atomic(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

inline std::vector<std::pair<std::string, std::string>> log_attributes(const std::string& source, const std::string& hash) {
    return {{"source", source}, {"config_hash", hash}};
}

// ---------------------------------------------------------------------------
// Full run

/// Executes ingest -> featurize -> cluster -> profile -> label -> build-log (-> evaluate when
/// ground truth is available). The configuration is validated before anything is written.
inline RunManifest run_pipeline(const PipelineConfig& c, const Backends& backends = {}) {
    c.validate();
    auto backend = resolve_backend(c, backends);
    const auto dir = c.output_dir;
    std::filesystem::create_directories(dir);

    RunManifest m;
    m.config_hash = config_hash(c);
    m.created_at = utc_now_iso();
    m.seeds = {{"clustering", c.clustering.seed}, {"labeling", c.labeling.llm.seed}};
    if (c.ingestion.synthesize) m.seeds["synthgen"] = c.ingestion.synth_spec.seed;
    emit_artifact(m, dir, "config", "config.json", to_json(c).dump(2) + "\n");

    try {
        auto d = prepare(c, dir, m);

        LabelMap labels;
        run_stage(m, "label", !c.resume.labels.empty(), [&](StageRecord& rec) {
            if (!c.resume.labels.empty()) {
                labels = label_map_from_json(nlohmann::json::parse(text::read_file(c.resume.labels)));
                return;
            }
            const auto pool = resolve_prompt_pool(c.labeling);
            emit_artifact(m, dir, "prompt", "prompt.txt", build_prompt(d.profiles, c.labeling.tier, pool));
            CallRecord call;
            std::string raw;
            try {
                labels = label_clusters(d.profiles, c.labeling.tier, c.labeling.llm, *backend, 0, &call, pool, &raw);
            } catch (...) {
                if (call.attempts) m.calls.push_back(call);
                throw;
            }
            m.calls.push_back(call);
            emit_artifact(m, dir, "llm_response", "llm_response.txt", raw);
            if (!labels.ambiguous.empty()) {
                const auto msg = std::to_string(labels.ambiguous.size()) + " ambiguous label(s)";
                if (c.labeling.strict) fail(ErrorCode::AmbiguousLabel, msg + " rejected in strict mode");
                m.warnings.push_back(msg);
                rec.detail = msg;
            }
            emit_artifact(m, dir, "labels", "labels.json", to_json(labels).dump(2) + "\n");
        });

        BuiltLog built;
        run_stage(m, "build-log", false, [&](StageRecord& rec) {
            built = build_log(d.frame, d.assignment, labels, c.segmentation, log_attributes(d.source, m.config_hash));
            write_log_artifacts(m, dir, built, c.segmentation);
            rec.detail = std::to_string(built.log.cases.size()) + " cases, " + std::to_string(built.segmentation.dropped.size()) +
                         " dropped";
        });

        if (!d.truth_csv.empty()) {
            run_stage(m, "evaluate", false, [&](StageRecord& rec) {
                auto provider = resolve_provider(c.evaluation, backends);
                const auto reference = align_truth(d.frame, d.truth_csv);
                auto r = evaluate_timeline(m, dir, built.timeline, reference, c.evaluation, *provider);
                rec.detail = r ? "swa=" + text::format_double(r->swa) : "no rows matched the ground truth";
            });
        }
        m.status = "complete";
    } catch (const Error& e) {
        m.status = "failed";
        m.error = e.what();
        write_manifest(m, dir);
        throw;
    }
    write_manifest(m, dir);
    return m;
}

// ---------------------------------------------------------------------------
// Experiment sweep

struct SweepReport {
    std::vector<SweepRun> runs;
    std::vector<SweepGroup> groups;
    struct Diversity {
        int tier;
        double temperature;
        std::size_t unique_labels;
    };
    std::vector<Diversity> diversity;
    std::vector<std::vector<std::string>> run_labels; ///< parallel to `runs`
};

inline std::uint64_t sweep_seed(std::uint64_t base, int tier, std::size_t temp_index, int run) {
    std::uint64_t h = base ^ 0x9E3779B97F4A7C15ULL;
    for (std::uint64_t v : {static_cast<std::uint64_t>(tier), static_cast<std::uint64_t>(temp_index), static_cast<std::uint64_t>(run)}) {
        h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
        h *= 0xBF58476D1CE4E5B9ULL;
    }
    return h;
}

/// Repeats labeling and evaluation for every (tier, temperature) cell. Clustering and profiling
/// run once. Failed runs are recorded and excluded from group statistics.
inline SweepReport run_experiment_sweep(const PipelineConfig& c, const Backends& backends = {}) {
    c.validate_sweep();
    auto backend = resolve_backend(c, backends);
    const auto dir = c.output_dir;
    std::filesystem::create_directories(dir);
    RunManifest m;
    m.config_hash = config_hash(c);
    m.created_at = utc_now_iso();
    m.seeds = {{"clustering", c.clustering.seed}, {"labeling", c.labeling.llm.seed}};
    emit_artifact(m, dir, "config", "config.json", to_json(c).dump(2) + "\n");

    SweepReport report;
    try {
        auto d = prepare(c, dir, m);
        if (d.truth_csv.empty()) fail(ErrorCode::InvalidConfig, "sweep needs ground truth (evaluation.truth or synthesized input)");
        const auto reference = align_truth(d.frame, d.truth_csv);
        auto provider = resolve_provider(c.evaluation, backends);
        const auto pool = resolve_prompt_pool(c.labeling);

        struct Cell {
            int tier;
            std::size_t temp_index;
            int run;
        };
        std::vector<Cell> cells;
        for (int tier : c.sweep.tiers)
            for (std::size_t ti = 0; ti < c.sweep.temperatures.size(); ++ti)
                for (int r = 0; r < c.sweep.runs_per_cell; ++r) cells.push_back({tier, ti, r});
        report.runs.resize(cells.size());
        report.run_labels.resize(cells.size());
        std::vector<std::optional<LabelMap>> maps(cells.size());
        std::vector<CallRecord> calls(cells.size());

        run_stage(m, "sweep", false, [&](StageRecord& rec) {
            std::atomic<std::size_t> next{0};
            auto worker = [&] {
                for (std::size_t i = next++; i < cells.size(); i = next++) {
                    const auto& cell = cells[i];
                    auto& run = report.runs[i];
                    run.tier = cell.tier;
                    run.temperature = c.sweep.temperatures[cell.temp_index];
                    run.run_index = cell.run;
                    try {
                        LlmOptions opt = c.labeling.llm;
                        opt.temperature = run.temperature;
                        opt.seed = sweep_seed(c.labeling.llm.seed, cell.tier, cell.temp_index, cell.run);
                        PromptTier tier{cell.tier, cell.tier == 3 ? c.labeling.tier.user_context : std::string{}};
                        auto labels = label_clusters(d.profiles, tier, opt, *backend, cell.run, &calls[i], pool);
                        const auto timeline = labeled_timeline(d.frame, d.assignment, labels);
                        const auto instances = timeline_instances(timeline, reference);
                        run.swa = swa(instances, c.evaluation.threshold, *provider).swa;
                        for (const auto& [id, l] : labels.entries) report.run_labels[i].push_back(l);
                        maps[i] = std::move(labels);
                    } catch (const std::exception& e) {
                        run.swa.reset();
                        run.error = e.what();
                    }
                }
            };
            std::size_t threads = c.sweep.concurrency ? c.sweep.concurrency : std::max(1u, std::thread::hardware_concurrency());
            threads = std::min(threads, cells.size());
            std::vector<std::thread> pool_threads;
            for (std::size_t t = 1; t < threads; ++t) pool_threads.emplace_back(worker);
            worker();
            for (auto& t : pool_threads) t.join();
            std::size_t failures = 0;
            for (const auto& r : report.runs) failures += r.swa ? 0 : 1;
            rec.detail = std::to_string(cells.size()) + " runs, " + std::to_string(failures) + " failed";
        });
        for (const auto& call : calls)
            if (call.attempts) m.calls.push_back(call);

        report.groups = aggregate_sweep(report.runs);
        for (const auto& g : report.groups) {
            std::vector<LabelMap> group_maps;
            for (std::size_t i = 0; i < cells.size(); ++i)
                if (maps[i] && report.runs[i].tier == g.tier && report.runs[i].temperature == g.temperature)
                    group_maps.push_back(*maps[i]);
            report.diversity.push_back({g.tier, g.temperature, group_maps.empty() ? 0 : label_diversity(group_maps)});
        }

        std::string runs_csv = "tier,temperature,run,swa,error,labels\n";
        for (std::size_t i = 0; i < report.runs.size(); ++i) {
            const auto& r = report.runs[i];
            std::string joined;
            for (const auto& l : report.run_labels[i]) joined += (joined.empty() ? "" : "|") + l;
            runs_csv += text::join_record({std::to_string(r.tier), text::format_double(r.temperature), std::to_string(r.run_index),
                                           r.swa ? text::format_double(*r.swa) : "", r.error, joined}) +
                        "\n";
        }
        std::string diversity_csv = "tier,temperature,unique_labels\n";
        auto diversity_json = nlohmann::json::array();
        for (const auto& dv : report.diversity) {
            diversity_csv += std::to_string(dv.tier) + "," + text::format_double(dv.temperature) + "," +
                             std::to_string(dv.unique_labels) + "\n";
            diversity_json.push_back({{"tier", dv.tier}, {"temperature", dv.temperature}, {"unique_labels", dv.unique_labels}});
        }
        auto groups_json = nlohmann::json::array();
        for (const auto& g : report.groups) groups_json.push_back(to_json(g));
        emit_artifact(m, dir, "sweep_summary", "sweep_summary.csv", sweep_summary_csv(report.groups));
        emit_artifact(m, dir, "sweep_diversity", "diversity.csv", diversity_csv);
        emit_artifact(m, dir, "sweep_runs", "runs.csv", runs_csv);
        emit_artifact(m, dir, "sweep_report", "sweep_report.json",
                      nlohmann::json{{"threshold", c.evaluation.threshold},
                                     {"provider", provider->name()},
                                     {"runs_per_cell", c.sweep.runs_per_cell},
                                     {"groups", groups_json},
                                     {"diversity", diversity_json}}
                              .dump(2) +
                          "\n");
        m.status = "complete";
    } catch (const Error& e) {
        m.status = "failed";
        m.error = e.what();
        write_manifest(m, dir);
        throw;
    }
    write_manifest(m, dir);
    return report;
}

} // namespace iotminer
