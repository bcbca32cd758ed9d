// iotminer command-line interface.
//
// Exit codes: 0 success, 1 validation error, 2 stage failure, 3 backend failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "iotminer/backends.hpp"
#include "iotminer/iotminer.hpp"
#include "iotminer/service.hpp"

namespace fs = std::filesystem;
using namespace iotminer;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kValidation = 1, kStage = 2, kBackend = 3 };

int exit_code_for(const Error& e) {
    if (e.is_backend_failure()) return kBackend;
    switch (e.code()) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::MissingContext:
        return kValidation;
    default:
        return kStage;
    }
}

void write_output(const std::string& path, std::string_view contents) {
    if (path.empty() || path == "-") {
        std::cout << contents;
        return;
    }
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    text::write_file_atomic(path, contents);
}

std::optional<char> delimiter_option(const std::string& s) {
    if (s.empty()) return std::nullopt;
    if (s == "\\t" || s == "tab") return '\t';
    if (s.size() != 1) fail(ErrorCode::InvalidConfig, "--delimiter must be one character");
    return s[0];
}

std::vector<std::string> csv_list(const std::string& s) { return s.empty() ? std::vector<std::string>{} : text::split_list(s); }

Duration duration_option(const std::string& flag, const std::string& value) {
    auto d = parse_duration(value);
    if (!d || d->count() <= 0) fail(ErrorCode::InvalidConfig, flag + ": invalid duration '" + value + "'");
    return *d;
}

json read_json_file(const std::string& path) {
    auto j = json::parse(text::read_file(path), nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::InvalidConfig, "'" + path + "' is not valid JSON");
    return j;
}

/// Config document for run/sweep: file named by --config or IOTMINER_CONFIG, then flag overrides.
json load_config_document(const std::string& flag_path) {
    std::string path = flag_path;
    if (path.empty())
        if (const char* env = std::getenv("IOTMINER_CONFIG")) path = env;
    return path.empty() ? json::object() : read_json_file(path);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"iotminer: sensor time series to labeled process-mining event logs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    // synth ---------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate synthetic duty-cycle sensor data with planted activities");
    std::string synth_spec = "default", synth_out, synth_truth;
    std::optional<std::uint64_t> synth_seed;
    std::optional<double> synth_duration;
    synth->add_option("--spec", synth_spec, "Spec JSON file or 'default'");
    synth->add_option("--seed", synth_seed, "Random seed");
    synth->add_option("--duration", synth_duration, "Total duration in seconds");
    synth->add_option("--output", synth_out, "Sensor CSV output")->required();
    synth->add_option("--truth", synth_truth, "Ground-truth CSV output");

    // ingest --------------------------------------------------------------
    auto* ingest = app.add_subcommand("ingest", "Load, repair and type a sensor export");
    std::string in_path, in_delim, in_ts, in_interp = "linear", in_out, in_summary;
    std::size_t in_max_gap = 5;
    bool in_dedup = false;
    ingest->add_option("--input", in_path, "Sensor export (CSV/TSV/JSON lines)")->required()->check(CLI::ExistingFile);
    ingest->add_option("--delimiter", in_delim, "Force the field delimiter");
    ingest->add_option("--timestamp-column", in_ts, "Force the timestamp column");
    ingest->add_option("--interpolation", in_interp, "linear | previous | zero");
    ingest->add_option("--max-gap", in_max_gap, "Longest gap (rows) to interpolate");
    ingest->add_flag("--deduplicate", in_dedup, "Keep the first row of duplicated timestamps");
    ingest->add_option("--output", in_out, "Repaired frame CSV")->required();
    ingest->add_option("--repair-summary", in_summary, "Gap report JSON");

    // featurize -----------------------------------------------------------
    auto* featurize = app.add_subcommand("featurize", "Build the feature matrix");
    std::string fe_frame, fe_channels, fe_derivs, fe_stats, fe_norm = "none", fe_out;
    bool fe_diff = false;
    double fe_eps = 0.0, fe_min_var = 0.0;
    std::size_t fe_window = 1;
    featurize->add_option("--frame", fe_frame, "Frame CSV")->required()->check(CLI::ExistingFile);
    featurize->add_option("--channels", fe_channels, "Comma-separated base channels (default: automatic selection)");
    featurize->add_option("--min-variation", fe_min_var, "Variation threshold for automatic selection");
    featurize->add_flag("--diffcode", fe_diff, "Add differential coding columns");
    featurize->add_option("--diff-epsilon", fe_eps, "Differential coding dead band");
    featurize->add_option("--derivatives", fe_derivs, "Derivative orders, e.g. 1,2");
    featurize->add_option("--window", fe_window, "Sliding window length (rows)");
    featurize->add_option("--stats", fe_stats, "Window statistics: mean,std,min,max");
    featurize->add_option("--normalize", fe_norm, "none | standard | minmax | robust");
    featurize->add_option("--output", fe_out, "Feature CSV (sidecar written next to it)")->required();

    // cluster -------------------------------------------------------------
    auto* cluster = app.add_subcommand("cluster", "Grid search over clustering configurations");
    std::string cl_features, cl_grid = "default", cl_results, cl_assign, cl_proj, cl_frame;
    std::uint64_t cl_seed = 42;
    std::size_t cl_threads = 0, cl_dims = 2;
    cluster->add_option("--features", cl_features, "Feature CSV")->required()->check(CLI::ExistingFile);
    cluster->add_option("--grid", cl_grid, "Search space JSON or 'default'");
    cluster->add_option("--seed", cl_seed, "K-means seed");
    cluster->add_option("--threads", cl_threads, "Worker threads (0 = all cores)");
    cluster->add_option("--results", cl_results, "Ranked results JSON")->required();
    cluster->add_option("--assignment", cl_assign, "Winning assignment CSV")->required();
    cluster->add_option("--projection", cl_proj, "PCA projection CSV of the winner");
    cluster->add_option("--dims", cl_dims, "Projection dimensions (2 or 3)");

    // profile -------------------------------------------------------------
    auto* profile = app.add_subcommand("profile", "Per-cluster statistics in original units");
    std::string pr_frame, pr_assign, pr_channels, pr_out;
    profile->add_option("--frame", pr_frame, "Frame CSV")->required()->check(CLI::ExistingFile);
    profile->add_option("--assignment", pr_assign, "Assignment CSV")->required()->check(CLI::ExistingFile);
    profile->add_option("--channels", pr_channels, "Comma-separated channels (default: automatic selection)");
    profile->add_option("--output", pr_out, "Profiles JSON")->required();

    // label ---------------------------------------------------------------
    auto* label = app.add_subcommand("label", "Name clusters with a language model");
    std::string lb_profiles, lb_context, lb_context_file, lb_backend = "mock", lb_out, lb_prompt_dir, lb_protos, lb_prompt_out,
                                                          lb_raw_out;
    LlmOptions lb_opts;
    int lb_tier = 1;
    bool lb_strict = false;
    label->add_option("--profiles", lb_profiles, "Profiles JSON")->required()->check(CLI::ExistingFile);
    label->add_option("--tier", lb_tier, "Prompt tier 1-3")->check(CLI::Range(1, 3));
    label->add_option("--context", lb_context, "Operational context (tier 3)");
    label->add_option("--context-file", lb_context_file, "File holding the operational context")->check(CLI::ExistingFile);
    label->add_option("--backend", lb_backend, "mock | http");
    label->add_option("--model", lb_opts.model, "Model name");
    label->add_option("--temperature", lb_opts.temperature, "Sampling temperature in [0, 1]");
    label->add_option("--max-tokens", lb_opts.max_tokens, "Completion token limit");
    label->add_option("--endpoint", lb_opts.endpoint, "Chat-completions URL");
    label->add_option("--credential-env", lb_opts.credential_env, "Environment variable holding the API key");
    label->add_option("--retries", lb_opts.retries, "Retries for transient failures");
    label->add_option("--seed", lb_opts.seed, "Mock backend seed");
    label->add_option("--prompt-dir", lb_prompt_dir, "Directory with tier1.txt..tier3.txt");
    label->add_option("--prototypes", lb_protos, "Mock prototype JSON");
    label->add_flag("--strict", lb_strict, "Fail on ambiguous 'X or Y' labels");
    label->add_option("--output", lb_out, "Label map JSON")->required();
    label->add_option("--prompt-out", lb_prompt_out, "Write the prompt sent");
    label->add_option("--response-out", lb_raw_out, "Write the raw response");

    // build-log -----------------------------------------------------------
    auto* build = app.add_subcommand("build-log", "Segment a labeled timeline into an event log");
    std::string bl_timeline, bl_frame, bl_assign, bl_labels, bl_method = "time-gap", bl_gap, bl_max, bl_change, bl_xes, bl_csv,
                                                                      bl_drop, bl_source;
    int bl_min = 2, bl_offset = 0;
    double bl_sens = 0.0;
    bool bl_no_merge = false;
    build->add_option("--timeline", bl_timeline, "Timeline CSV (row_id,timestamp,activity[,...])");
    build->add_option("--frame", bl_frame, "Frame CSV (with --assignment and --labels)");
    build->add_option("--assignment", bl_assign, "Assignment CSV");
    build->add_option("--labels", bl_labels, "Label map JSON");
    build->add_option("--method", bl_method, "time-gap | day | sensor-change");
    build->add_option("--gap", bl_gap, "Gap threshold, e.g. 15m (default: 10x median sampling interval)");
    build->add_option("--min-activities", bl_min, "Minimum events per retained case");
    build->add_option("--max-duration", bl_max, "Maximum case duration, e.g. 8h");
    build->add_option("--change-channel", bl_change, "Channel for sensor-change segmentation");
    build->add_option("--sensitivity", bl_sens, "Change threshold for sensor-change segmentation");
    build->add_option("--utc-offset-minutes", bl_offset, "Local time offset for day boundaries");
    build->add_flag("--merge,!--no-merge", [&](std::int64_t count) { bl_no_merge = count < 0; },
                    "Merge consecutive identical activities (default on)");
    build->add_option("--xes", bl_xes, "XES output");
    build->add_option("--csv", bl_csv, "CSV output");
    build->add_option("--drop-report", bl_drop, "Drop report JSON output");
    build->add_option("--source", bl_source, "Log-level source attribute");

    // evaluate ------------------------------------------------------------
    auto* evaluate = app.add_subcommand("evaluate", "Similarity-weighted accuracy against ground truth");
    std::string ev_pred, ev_ref, ev_provider = "lexical", ev_out, ev_align, ev_key = "row_id", ev_endpoint, ev_model;
    std::optional<double> ev_threshold;
    bool ev_strict = false;
    evaluate->add_option("--predicted", ev_pred, "Predicted labels CSV")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--reference", ev_ref, "Reference labels CSV")->check(CLI::ExistingFile);
    evaluate->add_option("--threshold", ev_threshold, "Similarity threshold T in [0, 1] (default 0.6)");
    evaluate->add_flag("--strict", ev_strict, "Require an explicit --threshold");
    evaluate->add_option("--provider", ev_provider, "lexical | embedding");
    evaluate->add_option("--embedding-endpoint", ev_endpoint, "Embeddings URL");
    evaluate->add_option("--embedding-model", ev_model, "Embedding model");
    evaluate->add_option("--key", ev_key, "Join column: row_id | timestamp");
    evaluate->add_option("--output", ev_out, "Report JSON")->required();
    evaluate->add_option("--alignment", ev_align, "Alignment matrix output prefix (.csv and .json)");

    // run / sweep ---------------------------------------------------------
    struct RunFlags {
        std::string config, output_dir, input, context;
        bool synth = false;
        std::optional<int> tier;
        std::optional<double> temperature, threshold;
        std::optional<std::uint64_t> seed;
        std::optional<std::string> backend;
    };
    RunFlags rf;
    auto add_run_flags = [&rf](CLI::App* cmd) {
        cmd->add_option("--config", rf.config, "Pipeline config JSON (or IOTMINER_CONFIG)");
        cmd->add_option("--output-dir", rf.output_dir, "Artifact directory");
        cmd->add_option("--input", rf.input, "Sensor export");
        cmd->add_flag("--synth", rf.synth, "Use synthetic duty-cycle data");
        cmd->add_option("--tier", rf.tier, "Prompt tier");
        cmd->add_option("--context", rf.context, "Operational context for tier 3");
        cmd->add_option("--temperature", rf.temperature, "Sampling temperature");
        cmd->add_option("--threshold", rf.threshold, "SWA threshold");
        cmd->add_option("--seed", rf.seed, "Seed for clustering, synthesis and the mock backend");
        cmd->add_option("--backend", rf.backend, "mock | http");
    };
    auto* run = app.add_subcommand("run", "Run the full pipeline");
    add_run_flags(run);
    auto* sweep = app.add_subcommand("sweep", "Repeat labeling and evaluation over tiers and temperatures");
    add_run_flags(sweep);
    std::string sw_tiers, sw_temps;
    std::optional<int> sw_runs;
    std::optional<std::size_t> sw_conc;
    sweep->add_option("--tiers", sw_tiers, "Comma-separated tiers");
    sweep->add_option("--temperatures", sw_temps, "Comma-separated temperatures");
    sweep->add_option("--runs", sw_runs, "Runs per (tier, temperature) cell");
    sweep->add_option("--concurrency", sw_conc, "Concurrent runs (0 = all cores)");

    // serve ---------------------------------------------------------------
    auto* serve_cmd = app.add_subcommand("serve", "Serve a run directory to the browser companion");
    std::string sv_dir, sv_host = "127.0.0.1";
    int sv_port = 8765;
    serve_cmd->add_option("--dir", sv_dir, "Run output directory")->required()->check(CLI::ExistingDirectory);
    serve_cmd->add_option("--host", sv_host, "Bind address");
    serve_cmd->add_option("--port", sv_port, "Port");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kValidation;
    }

    try {
        if (*synth) {
            auto spec = synth_spec == "default" ? default_duty_cycle() : duty_cycle_from_json(read_json_file(synth_spec));
            if (synth_seed) spec.seed = *synth_seed;
            if (synth_duration) spec.total_duration_s = *synth_duration;
            const auto data = generate(spec);
            write_output(synth_out, write_frame_csv(data.frame));
            if (!synth_truth.empty()) write_output(synth_truth, write_truth_csv(data));
            std::cerr << "synth: " << data.frame.rows() << " rows\n";
        } else if (*ingest) {
            FormatDescriptor fmt;
            auto frame = load_file(in_path, delimiter_option(in_delim),
                                   in_ts.empty() ? std::nullopt : std::optional<std::string>(in_ts), &fmt, LoadOptions{in_dedup});
            InterpolationPolicy policy;
            policy.method = parse_interpolation_method(in_interp);
            policy.max_gap = in_max_gap;
            auto repaired = interpolate_missing(frame, policy);
            write_output(in_out, write_frame_csv(repaired.frame));
            if (!in_summary.empty()) write_output(in_summary, repair_summary_json(repaired.unrepaired).dump(2) + "\n");
            std::cerr << "ingest: " << repaired.frame.rows() << " rows, delimiter '" << fmt.delimiter << "', timestamp column '"
                      << fmt.timestamp_column << "', " << repaired.unrepaired.size() << " unrepaired gaps\n";
        } else if (*featurize) {
            const auto frame = load_file(fe_frame, ',', "timestamp");
            FeatureSpec spec;
            spec.base_channels = fe_channels.empty() ? select_sensor_columns(frame, fe_min_var) : csv_list(fe_channels);
            spec.add_differential_coding = fe_diff;
            spec.differential_epsilon = fe_eps;
            for (const auto& o : csv_list(fe_derivs)) {
                auto v = text::parse_int(o);
                if (!v) fail(ErrorCode::InvalidConfig, "--derivatives: '" + o + "' is not an integer");
                spec.derivative_orders.push_back(static_cast<int>(*v));
            }
            spec.window = fe_window;
            for (const auto& s : csv_list(fe_stats)) spec.window_stats.push_back(parse_window_stat(s));
            spec.validate();
            auto fm = build_feature_matrix(frame, spec);
            const auto kind = parse_normalization(fe_norm);
            if (kind != NormalizationKind::None) fm = normalize(fm, kind);
            write_output(fe_out, write_feature_csv(fm));
            fs::path sidecar = fe_out;
            sidecar.replace_extension(".json");
            auto side = feature_sidecar(fm);
            side["spec"] = to_json(spec);
            write_output(sidecar.string(), side.dump(2) + "\n");
        } else if (*cluster) {
            fs::path sidecar_path = cl_features;
            sidecar_path.replace_extension(".json");
            std::optional<json> sidecar;
            if (fs::exists(sidecar_path)) sidecar = read_json_file(sidecar_path.string());
            const auto fm = read_feature_csv(text::read_file(cl_features), sidecar ? &*sidecar : nullptr);
            auto space = cl_grid == "default" ? default_search_space(fm.rows, cl_seed) : search_space_from_json(read_json_file(cl_grid));
            GridOptions opt;
            opt.threads = cl_threads;
            const auto ranked = grid_search(fm.rows, space, opt);
            write_output(cl_results, results_to_json(ranked).dump(2) + "\n");
            write_output(cl_assign, write_assignment_csv(ranked.front().assignment, fm.row_timestamps));
            if (!cl_proj.empty()) {
                const auto& w = ranked.front().config;
                const auto x = apply_normalizer(fm.rows, fit_normalizer(fm.rows, w.normalization));
                write_output(cl_proj, write_projection_csv(pca_project(x, cl_dims), ranked.front().assignment));
            }
            std::cerr << "cluster: winner " << to_json(ranked.front().config).dump() << "\n";
        } else if (*profile) {
            const auto frame = load_file(pr_frame, ',', "timestamp");
            const auto a = read_assignment_csv(text::read_file(pr_assign));
            const auto channels = pr_channels.empty() ? select_sensor_columns(frame, 0.0) : csv_list(pr_channels);
            write_output(pr_out, profiles_to_json(cluster_profiles(frame, channels, a)).dump(2) + "\n");
        } else if (*label) {
            const auto profiles = profiles_from_json(read_json_file(lb_profiles));
            PromptTier tier{lb_tier, lb_context_file.empty() ? lb_context : text::read_file(lb_context_file)};
            tier.validate();
            PipelineConfig pc;
            pc.labeling.backend = lb_backend;
            pc.labeling.mock_prototypes = lb_protos;
            std::unique_ptr<LlmBackend> backend;
            if (lb_backend == "http") backend = std::make_unique<HttpLlmBackend>();
            else if (lb_backend == "mock") backend = make_mock_backend(pc);
            else fail(ErrorCode::InvalidConfig, "--backend must be mock or http");
            const PromptPool pool = lb_prompt_dir.empty() ? PromptPool{} : PromptPool::from_directory(lb_prompt_dir);
            if (!lb_prompt_out.empty()) write_output(lb_prompt_out, build_prompt(profiles, tier, pool));
            CallRecord call;
            std::string raw;
            const auto labels = label_clusters(profiles, tier, lb_opts, *backend, 0, &call, pool, &raw);
            if (!lb_raw_out.empty()) write_output(lb_raw_out, raw);
            if (!labels.ambiguous.empty()) {
                std::cerr << "label: " << labels.ambiguous.size() << " ambiguous label(s)\n";
                if (lb_strict) fail(ErrorCode::AmbiguousLabel, "ambiguous labels rejected in strict mode");
            }
            write_output(lb_out, to_json(labels).dump(2) + "\n");
            std::cerr << "label: " << call.attempts << " attempt(s)\n";
        } else if (*build) {
            SegmentationConfig seg;
            seg.method = parse_segmentation_method(bl_method);
            if (!bl_gap.empty()) seg.gap_threshold = duration_option("--gap", bl_gap);
            if (!bl_max.empty()) seg.max_case_duration = duration_option("--max-duration", bl_max);
            seg.change_channel = bl_change;
            seg.sensitivity = bl_sens;
            seg.utc_offset_minutes = bl_offset;
            seg.min_activities_per_case = bl_min;
            seg.merge_consecutive = !bl_no_merge;
            seg.validate();
            Timeline timeline;
            if (!bl_timeline.empty()) {
                timeline = read_timeline_csv(text::read_file(bl_timeline),
                                             seg.method == SegmentationMethod::SensorChange ? seg.change_channel : "");
            } else if (!bl_frame.empty() && !bl_assign.empty() && !bl_labels.empty()) {
                const auto frame = load_file(bl_frame, ',', "timestamp");
                timeline = labeled_timeline(frame, read_assignment_csv(text::read_file(bl_assign)),
                                            label_map_from_json(read_json_file(bl_labels)),
                                            seg.method == SegmentationMethod::SensorChange ? seg.change_channel : "");
            } else {
                fail(ErrorCode::InvalidConfig, "build-log needs --timeline, or --frame with --assignment and --labels");
            }
            const auto result = segment_cases(timeline, seg);
            EventLog log{result.cases, {{"source", bl_source.empty() ? (bl_timeline.empty() ? bl_frame : bl_timeline) : bl_source}}};
            if (bl_xes.empty() && bl_csv.empty()) fail(ErrorCode::InvalidConfig, "build-log needs --xes and/or --csv");
            if (!bl_xes.empty()) write_output(bl_xes, to_xes(log));
            if (!bl_csv.empty()) write_output(bl_csv, to_csv(log));
            if (!bl_drop.empty()) write_output(bl_drop, drop_report_json(result.dropped).dump(2) + "\n");
            std::cerr << "build-log: " << log.cases.size() << " cases, " << log.event_count() << " events, "
                      << result.dropped.size() << " dropped\n";
        } else if (*evaluate) {
            if (ev_strict && !ev_threshold) fail(ErrorCode::InvalidConfig, "--threshold is required with --strict");
            if (ev_key != "row_id" && ev_key != "timestamp") fail(ErrorCode::InvalidConfig, "--key must be row_id or timestamp");
            const auto instances = join_label_columns(text::read_file(ev_pred), ev_ref.empty() ? "" : text::read_file(ev_ref), ev_key);
            EvaluationSettings s;
            s.provider = ev_provider;
            if (!ev_endpoint.empty()) s.embedding_endpoint = ev_endpoint;
            if (!ev_model.empty()) s.embedding_model = ev_model;
            if (s.provider != "lexical" && s.provider != "embedding")
                fail(ErrorCode::InvalidConfig, "--provider must be lexical or embedding");
            auto provider = network_backends().similarity(s);
            const double t = ev_threshold.value_or(kDefaultSwaThreshold);
            SwaResult r;
            try {
                r = swa(instances, t, *provider);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::ProviderUnavailable) throw;
                std::cerr << "warning: " << e.what() << "; falling back to lexical similarity\n";
                provider = make_lexical_provider();
                r = swa(instances, t, *provider);
            }
            write_output(ev_out, evaluation_report_json(instances, r, provider->name()).dump(2) + "\n");
            if (!ev_align.empty()) {
                const auto m = alignment_matrix(instances, *provider);
                write_output(ev_align + ".csv", alignment_csv(m));
                write_output(ev_align + ".json", to_json(m).dump(2) + "\n");
            }
            std::cerr << "evaluate: SWA " << r.swa << " over " << r.n << " instances (T = " << t << ")\n";
        } else if (*run || *sweep) {
            auto doc = load_config_document(rf.config);
            json patch = json::object();
            if (!rf.output_dir.empty()) patch["output_dir"] = rf.output_dir;
            if (!rf.input.empty()) patch["ingestion"]["input"] = rf.input;
            if (rf.synth) patch["ingestion"]["synthesize"] = true;
            if (rf.tier) patch["labeling"]["tier"] = *rf.tier;
            if (!rf.context.empty()) patch["labeling"]["user_context"] = rf.context;
            if (rf.temperature) patch["labeling"]["temperature"] = *rf.temperature;
            if (rf.backend) patch["labeling"]["backend"] = *rf.backend;
            if (rf.threshold) patch["evaluation"]["threshold"] = *rf.threshold;
            if (rf.seed) {
                patch["clustering"]["seed"] = *rf.seed;
                patch["labeling"]["seed"] = *rf.seed;
            }
            if (*sweep) {
                if (!sw_tiers.empty()) {
                    std::vector<int> tiers;
                    for (const auto& t : csv_list(sw_tiers)) tiers.push_back(static_cast<int>(text::parse_int(t).value_or(0)));
                    patch["sweep"]["tiers"] = tiers;
                }
                if (!sw_temps.empty()) {
                    std::vector<double> temps;
                    for (const auto& t : csv_list(sw_temps)) {
                        auto v = text::parse_double(t);
                        if (!v) fail(ErrorCode::InvalidConfig, "--temperatures: '" + t + "' is not a number");
                        temps.push_back(*v);
                    }
                    patch["sweep"]["temperatures"] = temps;
                }
                if (sw_runs) patch["sweep"]["runs_per_cell"] = *sw_runs;
                if (sw_conc) patch["sweep"]["concurrency"] = *sw_conc;
            }
            doc.merge_patch(patch);
            auto config = pipeline_config_from_json(doc);
            if (rf.seed && config.ingestion.synthesize && !(doc.contains("ingestion") && doc["ingestion"].contains("synth_spec") &&
                                                            doc["ingestion"]["synth_spec"].is_object() &&
                                                            doc["ingestion"]["synth_spec"].contains("seed")))
                config.ingestion.synth_spec.seed = *rf.seed;
            if (*run) {
                const auto m = run_pipeline(config, network_backends());
                std::cerr << "run: " << m.status << ", " << m.artifacts.size() << " artifacts in " << config.output_dir << "\n";
            } else {
                const auto report = run_experiment_sweep(config, network_backends());
                std::cerr << "sweep: " << report.groups.size() << " groups, " << report.runs.size() << " runs\n";
            }
        } else if (*serve_cmd) {
            std::cerr << "serving " << sv_dir << " on http://" << sv_host << ":" << sv_port << "\n";
            serve(sv_dir, sv_host, sv_port, network_backends());
        }
    } catch (const Error& e) {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kStage;
    }
    return kOk;
}
