#pragma once

// Local JSON API over a pipeline output directory. Reads run concurrently; mutations are
// serialized, guarded by the manifest version token, and appended to the manifest.

#include <filesystem>
#include <shared_mutex>
#include <string>

#include <nlohmann/json.hpp>

#include "iotminer/http_util.hpp"
#include "iotminer/pipeline.hpp"

namespace iotminer {

class PipelineService {
public:
    explicit PipelineService(std::filesystem::path dir, Backends backends = {})
        : dir_(std::move(dir)), backends_(std::move(backends)) {
        if (!std::filesystem::exists(dir_ / "manifest.json"))
            fail(ErrorCode::InvalidConfig, "no manifest.json in '" + dir_.string() + "'");
    }

    void register_routes(httplib::Server& server) {
        server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                    {"Access-Control-Allow-Headers", "Content-Type"},
                                    {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
        server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
        server.Get("/api/state", reader([this](const httplib::Request&, httplib::Response& res) {
                       const auto m = manifest();
                       reply(res, 200,
                             {{"version", m.version},
                              {"status", m.status},
                              {"config_hash", m.config_hash},
                              {"stages", to_json(m)["stages"]},
                              {"artifacts", m.artifacts},
                              {"warnings", m.warnings},
                              {"mutations", m.mutations.size()}});
                   }));
        server.Get("/api/clustering/results", reader([this](const httplib::Request&, httplib::Response& res) {
                       passthrough(res, "cluster_results");
                   }));
        server.Get("/api/profiles", reader([this](const httplib::Request&, httplib::Response& res) {
                       passthrough(res, "profiles");
                   }));
        server.Get("/api/labels", reader([this](const httplib::Request&, httplib::Response& res) {
                       passthrough(res, "labels");
                   }));
        server.Get("/api/projection", reader([this](const httplib::Request& req, httplib::Response& res) {
                       projection(req, res);
                   }));
        server.Get("/api/eventlog/preview", reader([this](const httplib::Request& req, httplib::Response& res) {
                       preview(req, res);
                   }));
        server.Get("/api/evaluation", reader([this](const httplib::Request&, httplib::Response& res) {
                       const auto m = manifest();
                       if (!m.artifacts.contains("evaluation_report")) return error(res, 404, "no evaluation report");
                       nlohmann::json body{{"report", load_json("evaluation_report")}};
                       if (m.artifacts.contains("alignment_json")) body["alignment"] = load_json("alignment_json");
                       reply(res, 200, body);
                   }));
        server.Get("/api/sweep", reader([this](const httplib::Request&, httplib::Response& res) {
                       passthrough(res, "sweep_report");
                   }));
        server.Post("/api/labels", writer([this](const httplib::Request& req, httplib::Response& res) {
                        post_labels(req, res);
                    }));
        server.Post("/api/segmentation", writer([this](const httplib::Request& req, httplib::Response& res) {
                        post_segmentation(req, res);
                    }));
    }

private:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void error(httplib::Response& res, int status, const std::string& message,
                      const std::vector<FieldError>& fields = {}) {
        auto errs = nlohmann::json::array();
        for (const auto& f : fields) errs.push_back({{"field", f.field}, {"message", f.message}});
        reply(res, status, {{"error", message}, {"errors", errs}});
    }

    static void guarded(const Handler& h, const httplib::Request& req, httplib::Response& res) {
        try {
            h(req, res);
        } catch (const Error& e) {
            error(res, e.code() == ErrorCode::InvalidConfig ? 422 : 500, e.what());
        } catch (const std::exception& e) {
            error(res, 500, e.what());
        }
    }

    Handler reader(Handler h) {
        return [this, h](const httplib::Request& req, httplib::Response& res) {
            std::shared_lock lock(mutex_);
            guarded(h, req, res);
        };
    }

    Handler writer(Handler h) {
        return [this, h](const httplib::Request& req, httplib::Response& res) {
            std::unique_lock lock(mutex_);
            guarded(h, req, res);
        };
    }

    RunManifest manifest() const { return manifest_from_json(nlohmann::json::parse(text::read_file(dir_ / "manifest.json"))); }

    std::optional<std::filesystem::path> artifact(const std::string& name) const {
        const auto m = manifest();
        auto it = m.artifacts.find(name);
        if (it == m.artifacts.end()) return std::nullopt;
        return dir_ / it->second;
    }

    nlohmann::json load_json(const std::string& name) const {
        const auto p = artifact(name);
        if (!p) fail(ErrorCode::IoError, "artifact '" + name + "' is missing");
        return nlohmann::json::parse(text::read_file(*p));
    }

    void passthrough(httplib::Response& res, const std::string& name) const {
        const auto p = artifact(name);
        if (!p || !std::filesystem::exists(*p)) return error(res, 404, "artifact '" + name + "' not available");
        res.status = 200;
        res.set_content(text::read_file(*p), "application/json");
    }

    PipelineConfig config() const { return pipeline_config_from_json(load_json("config")); }

    /// Repaired frame used by the run: the frame artifact, or the resumed frame path.
    SensorFrame frame(const PipelineConfig& c) const {
        if (auto p = artifact("frame")) return load_file(*p, ',', "timestamp");
        if (!c.resume.frame.empty()) return load_file(c.resume.frame, ',', "timestamp");
        fail(ErrorCode::IoError, "run has no frame artifact");
    }

    ClusterAssignment assignment(const PipelineConfig& c) const {
        if (auto p = artifact("assignment")) return read_assignment_csv(text::read_file(*p));
        if (!c.resume.assignment.empty()) return read_assignment_csv(text::read_file(c.resume.assignment));
        fail(ErrorCode::IoError, "run has no assignment artifact");
    }

    void projection(const httplib::Request& req, httplib::Response& res) const {
        std::string csv;
        if (req.has_param("config")) {
            const auto index = text::parse_int(req.get_param_value("config"));
            const auto results = load_json("cluster_results");
            if (!index || *index < 0 || static_cast<std::size_t>(*index) >= results.size())
                return error(res, 422, "config index out of range", {{"config", "must index cluster_results"}});
            const auto cfg = clustering_config_from_json(results[static_cast<std::size_t>(*index)].at("config"));
            const auto fp = artifact("features");
            if (!fp) return error(res, 404, "features artifact not available");
            const auto sidecar = load_json("features_sidecar");
            const auto fm = read_feature_csv(text::read_file(*fp), &sidecar);
            const auto r = evaluate_config(fm.rows, cfg);
            const auto x = apply_normalizer(fm.rows, fit_normalizer(fm.rows, cfg.normalization));
            csv = write_projection_csv(pca_project(x, config().clustering.projection_dims), r.assignment);
        } else {
            const auto p = artifact("projection");
            if (!p) return error(res, 404, "projection not available");
            csv = text::read_file(*p);
        }
        const auto lines = text::split_lines(csv);
        const auto header = text::split_record(lines.at(0), ',');
        auto points = nlohmann::json::array();
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            const auto f = text::split_record(lines[i], ',');
            nlohmann::json pt = nlohmann::json::object();
            for (std::size_t k = 0; k < header.size() && k < f.size(); ++k) {
                if (header[k] == "row_id" || header[k] == "cluster_id") pt[header[k]] = text::parse_int(f[k]).value_or(0);
                else pt[header[k]] = text::parse_double(f[k]).value_or(0.0);
            }
            points.push_back(std::move(pt));
        }
        reply(res, 200, {{"dims", header.size() - 2}, {"points", points}});
    }

    void preview(const httplib::Request& req, httplib::Response& res) const {
        const auto p = artifact("event_log_xes");
        if (!p) return error(res, 404, "event log not available");
        std::size_t k = 20;
        if (req.has_param("cases")) {
            const auto v = text::parse_int(req.get_param_value("cases"));
            if (!v || *v < 0) return error(res, 422, "invalid cases parameter", {{"cases", "must be a non-negative integer"}});
            k = static_cast<std::size_t>(*v);
        }
        auto body = eventlog_preview_json(read_xes(text::read_file(*p)), {}, k);
        if (auto d = artifact("drop_report")) body["dropped"] = nlohmann::json::parse(text::read_file(*d));
        reply(res, 200, body);
    }

    /// Checks the version token; replies and returns false on a problem.
    static bool check_version(const nlohmann::json& body, const RunManifest& m, httplib::Response& res) {
        if (!body.contains("version") || !body["version"].is_number_integer()) {
            error(res, 422, "missing version token", {{"version", "required integer matching /api/state version"}});
            return false;
        }
        if (body["version"].get<int>() != m.version) {
            reply(res, 409, {{"error", "version conflict"}, {"current_version", m.version}});
            return false;
        }
        return true;
    }

    /// Rebuilds the event log (and evaluation) with the given labels and segmentation.
    void rebuild(RunManifest& m, const PipelineConfig& c, const LabelMap& labels, const SegmentationConfig& seg) {
        const auto f = frame(c);
        const auto a = assignment(c);
        auto built = build_log(f, a, labels, seg, log_attributes(source_of(c), m.config_hash));
        write_log_artifacts(m, dir_, built, seg);
        std::string truth;
        if (auto t = artifact("truth")) truth = text::read_file(*t);
        else if (!c.evaluation.truth.empty() && std::filesystem::exists(c.evaluation.truth)) truth = text::read_file(c.evaluation.truth);
        else if (c.ingestion.synthesize) truth = write_truth_csv(generate(c.ingestion.synth_spec));
        if (!truth.empty()) {
            auto provider = resolve_provider(c.evaluation, backends_);
            evaluate_timeline(m, dir_, built.timeline, align_truth(f, truth), c.evaluation, *provider);
        }
    }

    static std::string source_of(const PipelineConfig& c) {
        if (!c.resume.frame.empty()) return c.resume.frame;
        if (c.ingestion.synthesize) return "synthgen:seed=" + std::to_string(c.ingestion.synth_spec.seed);
        return c.ingestion.input;
    }

    void commit(RunManifest& m, nlohmann::json mutation) {
        mutation["at"] = utc_now_iso();
        mutation["version"] = m.version + 1;
        m.mutations.push_back(std::move(mutation));
        m.version += 1;
        write_manifest(m, dir_);
    }

    void post_labels(const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) return error(res, 400, "body must be a JSON object");
        auto m = manifest();
        if (!check_version(body, m, res)) return;
        if (!body.contains("labels") || !body["labels"].is_object())
            return error(res, 422, "invalid label edit", {{"labels", "object mapping cluster id to label"}});
        auto labels = label_map_from_json(load_json("labels"));
        std::vector<FieldError> errs;
        nlohmann::json changes = nlohmann::json::object();
        std::map<int, SanitizedLabel> edits;
        for (auto it = body["labels"].begin(); it != body["labels"].end(); ++it) {
            const auto id = text::parse_int(it.key());
            const std::string field = "labels." + it.key();
            if (!id || !labels.entries.contains(static_cast<int>(*id))) {
                errs.push_back({field, "unknown cluster id"});
                continue;
            }
            if (!it.value().is_string()) {
                errs.push_back({field, "label must be a string"});
                continue;
            }
            try {
                edits[static_cast<int>(*id)] = sanitize_label(it.value().get<std::string>());
            } catch (const Error&) {
                errs.push_back({field, "label is empty after sanitization"});
            }
        }
        if (!errs.empty()) return error(res, 422, "invalid label edit", errs);
        for (const auto& [id, clean] : edits) {
            changes[std::to_string(id)] = {{"from", labels.entries[id]}, {"to", clean.text}};
            labels.entries[id] = clean.text;
            if (clean.ambiguous) labels.ambiguous.insert(id);
            else labels.ambiguous.erase(id);
        }
        labels.provenance.backend = "manual";
        const auto c = config();
        emit_artifact(m, dir_, "labels", "labels.json", to_json(labels).dump(2) + "\n");
        rebuild(m, c, labels, c.segmentation);
        commit(m, {{"kind", "labels"}, {"changes", changes}});
        reply(res, 200, {{"version", m.version}, {"labels", to_json(labels)}});
    }

    void post_segmentation(const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) return error(res, 400, "body must be a JSON object");
        auto m = manifest();
        if (!check_version(body, m, res)) return;
        if (!body.contains("config") || !body["config"].is_object())
            return error(res, 422, "invalid segmentation", {{"config", "segmentation config object required"}});
        std::vector<FieldError> errs;
        const auto seg = segmentation_config_from_json(body["config"], &errs);
        auto c = config();
        if (errs.empty() && seg.method == SegmentationMethod::SensorChange && !frame(c).find(seg.change_channel))
            errs.push_back({"change_channel", "unknown channel '" + seg.change_channel + "'"});
        if (!errs.empty()) return error(res, 422, "invalid segmentation", errs);
        const auto labels = label_map_from_json(load_json("labels"));
        c.segmentation = seg;
        emit_artifact(m, dir_, "config", "config.json", to_json(c).dump(2) + "\n");
        rebuild(m, c, labels, seg);
        commit(m, {{"kind", "segmentation"}, {"config", to_json(seg)}});
        std::size_t k = 20;
        if (body.contains("preview_cases") && body["preview_cases"].is_number_unsigned()) k = body["preview_cases"].get<std::size_t>();
        auto preview = eventlog_preview_json(read_xes(text::read_file(dir_ / "event_log.xes")), {}, k);
        preview["dropped"] = nlohmann::json::parse(text::read_file(dir_ / "drop_report.json"));
        reply(res, 200, {{"version", m.version}, {"preview", preview}});
    }

    std::filesystem::path dir_;
    Backends backends_;
    mutable std::shared_mutex mutex_;
};

/// Blocks serving `dir` on host:port until the server stops.
inline void serve(const std::filesystem::path& dir, const std::string& host, int port, Backends backends = {}) {
    PipelineService service(dir, std::move(backends));
    httplib::Server server;
    service.register_routes(server);
    if (!server.listen(host, port)) fail(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
}

} // namespace iotminer
