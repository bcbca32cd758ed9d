#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include "iotminer/clustering.hpp"
#include "iotminer/error.hpp"
#include "iotminer/ingestion.hpp"
#include "iotminer/labeling.hpp"
#include "iotminer/stats.hpp"
#include "iotminer/text.hpp"
#include "iotminer/time.hpp"

namespace iotminer {

/// Activity name given to DBSCAN noise rows.
inline constexpr std::string_view kUnclassified = "Unclassified";

// ---------------------------------------------------------------------------
// Labeled timeline

struct TimelineEntry {
    Instant time;
    std::string activity;
    std::size_t row = 0;  ///< source row index
    int cluster = 0;
    double value = std::numeric_limits<double>::quiet_NaN(); ///< change channel sample, if any

    friend bool operator==(const TimelineEntry& a, const TimelineEntry& b) {
        const bool same_value = (std::isnan(a.value) && std::isnan(b.value)) || a.value == b.value;
        return a.time == b.time && a.activity == b.activity && a.row == b.row && a.cluster == b.cluster && same_value;
    }
};

using Timeline = std::vector<TimelineEntry>;

/// Joins row timestamps, cluster assignment and labels. When `change_channel` is given its
/// values are carried along for sensor-change segmentation.
inline Timeline labeled_timeline(const SensorFrame& frame, const ClusterAssignment& assignment, const LabelMap& labels,
                                 const std::string& change_channel = {}) {
    if (assignment.labels.size() != frame.rows())
        fail(ErrorCode::LengthMismatch, "assignment has " + std::to_string(assignment.labels.size()) +
                                            " rows, frame has " + std::to_string(frame.rows()));
    const Channel* change = change_channel.empty() ? nullptr : &frame.at(change_channel);
    Timeline out;
    out.reserve(frame.rows());
    for (std::size_t r = 0; r < frame.rows(); ++r) {
        const int c = assignment.labels[r];
        TimelineEntry e{frame.timestamps[r], {}, r, c, std::numeric_limits<double>::quiet_NaN()};
        if (c == kNoiseLabel) {
            e.activity = kUnclassified;
        } else {
            auto it = labels.entries.find(c);
            if (it == labels.entries.end()) fail(ErrorCode::UnlabeledCluster, "cluster " + std::to_string(c) + " has no label");
            e.activity = it->second;
        }
        if (change && change->kind != ChannelKind::Text) e.value = change->values[r];
        out.push_back(std::move(e));
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    return out;
}

/// `row_id,timestamp,cluster,activity[,value]`
inline std::string write_timeline_csv(const Timeline& t, const std::string& value_name = {}) {
    std::string out = "row_id,timestamp,cluster,activity";
    if (!value_name.empty()) out += "," + text::quote_field(value_name);
    out += "\n";
    for (const auto& e : t) {
        std::vector<std::string> f{std::to_string(e.row), format_iso_millis(e.time), std::to_string(e.cluster), e.activity};
        if (!value_name.empty()) f.push_back(text::format_double(e.value));
        out += text::join_record(f) + "\n";
    }
    return out;
}

/// Reads a timeline CSV. Requires `timestamp` and `activity` columns; `row_id` and `cluster`
/// are optional, and `value_column` (when non-empty) supplies change-channel samples.
inline Timeline read_timeline_csv(std::string_view body, const std::string& value_column = {}) {
    const auto lines = text::split_lines(body);
    if (lines.empty()) fail(ErrorCode::EmptyTimeline, "timeline file is empty");
    const auto header = text::split_record(lines[0], ',');
    auto col = [&](std::string_view name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (text::trim(header[i]) == name) return i;
        return std::nullopt;
    };
    const auto ts = col("timestamp"), act = col("activity"), row = col("row_id"), cl = col("cluster");
    if (!ts || !act) fail(ErrorCode::InvalidConfig, "timeline needs timestamp and activity columns");
    std::optional<std::size_t> val;
    if (!value_column.empty()) {
        val = col(value_column);
        if (!val) fail(ErrorCode::UnknownChannel, "timeline has no column '" + value_column + "'");
    }
    Timeline out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty()) continue;
        const auto f = text::split_record(lines[i], ',');
        if (f.size() != header.size()) fail(ErrorCode::RaggedRow, "timeline line " + std::to_string(i + 1) + " is ragged");
        TimelineEntry e;
        e.time = parse_instant_or_throw(f[*ts]);
        e.activity = f[*act];
        e.row = row ? static_cast<std::size_t>(text::parse_int(f[*row]).value_or(0)) : out.size();
        e.cluster = cl ? static_cast<int>(text::parse_int(f[*cl]).value_or(0)) : 0;
        if (val) e.value = text::parse_double(f[*val]).value_or(std::numeric_limits<double>::quiet_NaN());
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Event log model

struct RowRange {
    std::size_t first = 0, last = 0;
    friend bool operator==(const RowRange&, const RowRange&) = default;
};

struct Event {
    std::string activity;
    Instant start;
    Instant end;
    std::optional<RowRange> source_rows;
    friend bool operator==(const Event&, const Event&) = default;
};

struct Case {
    std::string case_id;
    std::vector<Event> events;
    friend bool operator==(const Case&, const Case&) = default;
};

struct EventLog {
    std::vector<Case> cases;
    std::vector<std::pair<std::string, std::string>> attributes; ///< log-level string attributes, in order
    friend bool operator==(const EventLog&, const EventLog&) = default;

    std::size_t event_count() const {
        std::size_t n = 0;
        for (const auto& c : cases) n += c.events.size();
        return n;
    }
};

/// Collapses maximal runs of equal activity into single events.
inline Case merge_consecutive(const Case& c) {
    Case out{c.case_id, {}};
    for (const auto& e : c.events) {
        if (!out.events.empty() && out.events.back().activity == e.activity) {
            auto& last = out.events.back();
            last.end = std::max(last.end, e.end);
            if (last.source_rows && e.source_rows) {
                last.source_rows->first = std::min(last.source_rows->first, e.source_rows->first);
                last.source_rows->last = std::max(last.source_rows->last, e.source_rows->last);
            } else if (e.source_rows) {
                last.source_rows = e.source_rows;
            }
            continue;
        }
        out.events.push_back(e);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Segmentation

enum class SegmentationMethod { TimeGap, DayBoundary, SensorChange };

inline std::string_view to_string(SegmentationMethod m) {
    switch (m) {
    case SegmentationMethod::TimeGap: return "time-gap";
    case SegmentationMethod::DayBoundary: return "day";
    case SegmentationMethod::SensorChange: return "sensor-change";
    }
    return "time-gap";
}

inline SegmentationMethod parse_segmentation_method(std::string_view s) {
    const auto v = text::lower(text::trim(s));
    if (v == "time-gap" || v == "gap") return SegmentationMethod::TimeGap;
    if (v == "day" || v == "day-boundary") return SegmentationMethod::DayBoundary;
    if (v == "sensor-change" || v == "change") return SegmentationMethod::SensorChange;
    fail(ErrorCode::InvalidConfig, "unknown segmentation method '" + std::string(s) + "'");
}

struct FieldError {
    std::string field;
    std::string message;
};

struct SegmentationConfig {
    SegmentationMethod method = SegmentationMethod::TimeGap;
    std::optional<Duration> gap_threshold;     ///< unset: 10x the median sampling interval
    std::string change_channel;
    double sensitivity = 0.0;
    int utc_offset_minutes = 0;                ///< local time used for day boundaries
    int min_activities_per_case = 2;
    std::optional<Duration> max_case_duration; ///< unset: unbounded
    bool merge_consecutive = true;

    std::vector<FieldError> field_errors() const {
        std::vector<FieldError> errs;
        if (gap_threshold && gap_threshold->count() <= 0) errs.push_back({"gap_threshold", "must be a positive duration"});
        if (method == SegmentationMethod::SensorChange) {
            if (change_channel.empty()) errs.push_back({"change_channel", "required for sensor-change segmentation"});
            if (!(sensitivity >= 0) || !std::isfinite(sensitivity))
                errs.push_back({"sensitivity", "must be a finite non-negative number"});
        }
        if (utc_offset_minutes < -14 * 60 || utc_offset_minutes > 14 * 60)
            errs.push_back({"utc_offset_minutes", "must lie within +/-14 hours"});
        if (min_activities_per_case < 1) errs.push_back({"min_activities_per_case", "must be >= 1"});
        if (max_case_duration && max_case_duration->count() <= 0)
            errs.push_back({"max_case_duration", "must be a positive duration"});
        return errs;
    }

    void validate() const {
        const auto errs = field_errors();
        if (!errs.empty()) fail(ErrorCode::InvalidConfig, "segmentation." + errs.front().field + ": " + errs.front().message);
    }
};

inline std::string format_duration(Duration d) {
    const auto ms = d.count();
    if (ms % 86'400'000 == 0) return std::to_string(ms / 86'400'000) + "d";
    if (ms % 3'600'000 == 0) return std::to_string(ms / 3'600'000) + "h";
    if (ms % 60'000 == 0) return std::to_string(ms / 60'000) + "m";
    if (ms % 1000 == 0) return std::to_string(ms / 1000) + "s";
    return std::to_string(ms) + "ms";
}

inline nlohmann::json to_json(const SegmentationConfig& c) {
    nlohmann::json j{{"method", to_string(c.method)},
                     {"gap_threshold", c.gap_threshold ? nlohmann::json(format_duration(*c.gap_threshold)) : nlohmann::json(nullptr)},
                     {"change_channel", c.change_channel},
                     {"sensitivity", c.sensitivity},
                     {"utc_offset_minutes", c.utc_offset_minutes},
                     {"min_activities_per_case", c.min_activities_per_case},
                     {"max_case_duration",
                      c.max_case_duration ? nlohmann::json(format_duration(*c.max_case_duration)) : nlohmann::json(nullptr)},
                     {"merge_consecutive", c.merge_consecutive}};
    return j;
}

/// Parses a segmentation config, collecting per-field problems instead of throwing.
inline SegmentationConfig segmentation_config_from_json(const nlohmann::json& j, std::vector<FieldError>* errors) {
    SegmentationConfig c;
    std::vector<FieldError> local;
    auto& errs = errors ? *errors : local;
    auto duration_field = [&](const char* key, std::optional<Duration>& dst) {
        if (!j.contains(key) || j[key].is_null()) return;
        if (j[key].is_number()) {
            const double s = j[key].get<double>();
            if (s > 0) dst = Duration(static_cast<long long>(std::llround(s * 1000.0)));
            else errs.push_back({key, "must be a positive duration"});
            return;
        }
        if (!j[key].is_string()) {
            errs.push_back({key, "must be a duration string such as 15m"});
            return;
        }
        auto d = parse_duration(j[key].get<std::string>());
        if (!d || d->count() <= 0) errs.push_back({key, "invalid duration '" + j[key].get<std::string>() + "'"});
        else dst = d;
    };
    try {
        if (j.contains("method")) c.method = parse_segmentation_method(j.at("method").get<std::string>());
    } catch (const std::exception&) {
        errs.push_back({"method", "must be one of time-gap, day, sensor-change"});
    }
    duration_field("gap_threshold", c.gap_threshold);
    duration_field("max_case_duration", c.max_case_duration);
    try {
        c.change_channel = j.value("change_channel", std::string{});
        c.sensitivity = j.value("sensitivity", 0.0);
        c.utc_offset_minutes = j.value("utc_offset_minutes", 0);
        c.min_activities_per_case = j.value("min_activities_per_case", 2);
        c.merge_consecutive = j.value("merge_consecutive", true);
    } catch (const nlohmann::json::exception& e) {
        errs.push_back({"config", e.what()});
    }
    for (auto& e : c.field_errors())
        if (std::none_of(errs.begin(), errs.end(), [&](const auto& x) { return x.field == e.field; })) errs.push_back(e);
    if (!errors && !errs.empty()) fail(ErrorCode::InvalidConfig, "segmentation." + errs.front().field + ": " + errs.front().message);
    return c;
}

struct DropRecord {
    std::size_t case_ordinal = 0;
    std::string reason;
    RowRange row_range;
    friend bool operator==(const DropRecord&, const DropRecord&) = default;
};

struct Segmentation {
    std::vector<Case> cases;
    std::vector<DropRecord> dropped;
    Duration gap_threshold{0}; ///< effective threshold (time-gap method)
};

inline nlohmann::json drop_report_json(const std::vector<DropRecord>& dropped) {
    auto arr = nlohmann::json::array();
    for (const auto& d : dropped)
        arr.push_back({{"case_ordinal", d.case_ordinal}, {"reason", d.reason}, {"row_range", {d.row_range.first, d.row_range.last}}});
    return arr;
}

/// Median step between consecutive timestamps; zero for fewer than two entries.
inline Duration median_sampling_interval(const Timeline& t) {
    if (t.size() < 2) return Duration{0};
    std::vector<double> steps;
    steps.reserve(t.size() - 1);
    for (std::size_t i = 1; i < t.size(); ++i) steps.push_back(static_cast<double>((t[i].time - t[i - 1].time).count()));
    return Duration(static_cast<long long>(std::llround(stats::median(steps))));
}

namespace eventlog_detail {

inline long long local_day(Instant t, int offset_minutes) {
    const auto local = t + std::chrono::minutes(offset_minutes);
    return std::chrono::floor<std::chrono::days>(local).time_since_epoch().count();
}

} // namespace eventlog_detail

/// Splits the timeline into cases. Boundaries come from the configured method; a bounded
/// max_case_duration then starts a new case at the first row lying further than the bound from the
/// case start. Each row is an event (start = end = its timestamp) until optional merging. Cases with
/// too few events are dropped and reported; case IDs use the candidate ordinal, so dropped ordinals
/// leave gaps.
inline Segmentation segment_cases(const Timeline& timeline, const SegmentationConfig& config) {
    config.validate();
    if (timeline.empty()) fail(ErrorCode::EmptyTimeline, "timeline has no rows");
    for (std::size_t i = 1; i < timeline.size(); ++i)
        if (timeline[i].time < timeline[i - 1].time) fail(ErrorCode::InvalidConfig, "timeline is not sorted by time");

    Segmentation seg;
    if (config.method == SegmentationMethod::TimeGap) {
        seg.gap_threshold = config.gap_threshold ? *config.gap_threshold : median_sampling_interval(timeline) * 10;
    }
    auto boundary = [&](std::size_t i) {
        const auto& a = timeline[i - 1];
        const auto& b = timeline[i];
        switch (config.method) {
        case SegmentationMethod::TimeGap: return (b.time - a.time) > seg.gap_threshold;
        case SegmentationMethod::DayBoundary:
            return eventlog_detail::local_day(a.time, config.utc_offset_minutes) !=
                   eventlog_detail::local_day(b.time, config.utc_offset_minutes);
        case SegmentationMethod::SensorChange:
            if (std::isnan(a.value) || std::isnan(b.value)) return false;
            return std::abs(b.value - a.value) > config.sensitivity;
        }
        return false;
    };

    std::vector<std::pair<std::size_t, std::size_t>> spans; // [first, last) into timeline
    std::size_t start = 0;
    for (std::size_t i = 1; i <= timeline.size(); ++i) {
        bool cut = i == timeline.size() || boundary(i);
        if (!cut && config.max_case_duration) cut = (timeline[i].time - timeline[start].time) > *config.max_case_duration;
        if (cut) {
            spans.emplace_back(start, i);
            start = i;
        }
    }

    const std::size_t width = std::max<std::size_t>(4, std::to_string(spans.size()).size());
    for (std::size_t s = 0; s < spans.size(); ++s) {
        const auto [first, last] = spans[s];
        Case c{"case_" + text::zero_pad(s + 1, width), {}};
        for (std::size_t i = first; i < last; ++i) {
            const auto& e = timeline[i];
            c.events.push_back({e.activity, e.time, e.time, RowRange{e.row, e.row}});
        }
        if (config.merge_consecutive) c = merge_consecutive(c);
        if (static_cast<int>(c.events.size()) < config.min_activities_per_case) {
            std::size_t lo = timeline[first].row, hi = timeline[first].row;
            for (std::size_t i = first; i < last; ++i) {
                lo = std::min(lo, timeline[i].row);
                hi = std::max(hi, timeline[i].row);
            }
            seg.dropped.push_back({s + 1, "min_activities", {lo, hi}});
            continue;
        }
        seg.cases.push_back(std::move(c));
    }
    return seg;
}

// ---------------------------------------------------------------------------
// XES

namespace xes_detail {

inline std::string escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        case '\'': out += "&apos;"; break;
        case '\n': out += "&#10;"; break;
        case '\r': out += "&#13;"; break;
        case '\t': out += "&#9;"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

inline void attr(std::string& out, int indent, std::string_view type, std::string_view key, std::string_view value) {
    out.append(static_cast<std::size_t>(indent), ' ');
    out += "<";
    out += type;
    out += " key=\"" + escape(key) + "\" value=\"" + escape(value) + "\"/>\n";
}

} // namespace xes_detail

/// XES 1.0 document with the Concept and Time extensions. Events carry concept:name,
/// time:timestamp (start), end_time and, when known, row_first/row_last, always in that order.
inline std::string to_xes(const EventLog& log) {
    using xes_detail::attr;
    std::string out;
    out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out += "<log xes.version=\"1.0\" xes.features=\"nested-attributes\" xmlns=\"http://www.xes-standard.org/\">\n";
    out += "  <extension name=\"Concept\" prefix=\"concept\" uri=\"http://www.xes-standard.org/concept.xesext\"/>\n";
    out += "  <extension name=\"Time\" prefix=\"time\" uri=\"http://www.xes-standard.org/time.xesext\"/>\n";
    out += "  <global scope=\"trace\">\n";
    attr(out, 4, "string", "concept:name", "__INVALID__");
    out += "  </global>\n";
    out += "  <global scope=\"event\">\n";
    attr(out, 4, "string", "concept:name", "__INVALID__");
    attr(out, 4, "date", "time:timestamp", "1970-01-01T00:00:00.000Z");
    out += "  </global>\n";
    out += "  <classifier name=\"Activity\" keys=\"concept:name\"/>\n";
    for (const auto& [k, v] : log.attributes) attr(out, 2, "string", k, v);
    for (const auto& c : log.cases) {
        out += "  <trace>\n";
        attr(out, 4, "string", "concept:name", c.case_id);
        for (const auto& e : c.events) {
            out += "    <event>\n";
            attr(out, 6, "string", "concept:name", e.activity);
            attr(out, 6, "date", "time:timestamp", format_iso_millis(e.start));
            attr(out, 6, "date", "end_time", format_iso_millis(e.end));
            if (e.source_rows) {
                attr(out, 6, "int", "row_first", std::to_string(e.source_rows->first));
                attr(out, 6, "int", "row_last", std::to_string(e.source_rows->last));
            }
            out += "    </event>\n";
        }
        out += "  </trace>\n";
    }
    out += "</log>\n";
    return out;
}

/// Reads documents produced by to_xes (and plain XES logs with string/date/int attributes).
inline EventLog read_xes(const std::string& xml) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(xml);
        pt::read_xml(in, tree);
    } catch (const pt::xml_parser_error& e) {
        fail(ErrorCode::XesParseError, e.what());
    }
    const auto log_node = tree.get_child_optional("log");
    if (!log_node) fail(ErrorCode::XesParseError, "document has no <log> root");
    auto key_value = [](const pt::ptree& node) {
        return std::make_pair(node.get<std::string>("<xmlattr>.key", ""), node.get<std::string>("<xmlattr>.value", ""));
    };
    EventLog log;
    for (const auto& [tag, node] : *log_node) {
        if (tag == "string") {
            log.attributes.push_back(key_value(node));
        } else if (tag == "trace") {
            Case c;
            for (const auto& [ttag, tnode] : node) {
                if (ttag == "string" && key_value(tnode).first == "concept:name") {
                    c.case_id = key_value(tnode).second;
                } else if (ttag == "event") {
                    Event e;
                    std::optional<std::size_t> first, last;
                    bool have_end = false;
                    for (const auto& [etag, enode] : tnode) {
                        const auto [k, v] = key_value(enode);
                        if (etag == "string" && k == "concept:name") e.activity = v;
                        else if (etag == "date" && k == "time:timestamp") e.start = parse_instant_or_throw(v);
                        else if (etag == "date" && k == "end_time") {
                            e.end = parse_instant_or_throw(v);
                            have_end = true;
                        } else if (etag == "int" && k == "row_first") first = static_cast<std::size_t>(std::stoull(v));
                        else if (etag == "int" && k == "row_last") last = static_cast<std::size_t>(std::stoull(v));
                    }
                    if (!have_end) e.end = e.start;
                    if (first && last) e.source_rows = RowRange{*first, *last};
                    c.events.push_back(std::move(e));
                }
            }
            log.cases.push_back(std::move(c));
        }
    }
    return log;
}

// ---------------------------------------------------------------------------
// CSV

/// `case_id,activity,start,end`, RFC-4180 quoting.
inline std::string to_csv(const EventLog& log) {
    std::string out = "case_id,activity,start,end\n";
    for (const auto& c : log.cases)
        for (const auto& e : c.events)
            out += text::join_record({c.case_id, e.activity, format_iso_millis(e.start), format_iso_millis(e.end)}) + "\n";
    return out;
}

/// Inverse of to_csv. Row ranges and log attributes are not part of the CSV form.
inline EventLog read_eventlog_csv(std::string_view body) {
    const auto lines = text::split_lines(body);
    EventLog log;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = text::split_record(lines[i], ',');
        if (f.size() != 4) fail(ErrorCode::RaggedRow, "event CSV line " + std::to_string(i + 1) + " needs 4 fields");
        if (log.cases.empty() || log.cases.back().case_id != f[0]) log.cases.push_back({f[0], {}});
        log.cases.back().events.push_back({f[1], parse_instant_or_throw(f[2]), parse_instant_or_throw(f[3]), std::nullopt});
    }
    return log;
}

/// First `max_cases` cases as JSON, plus totals and the drop report.
inline nlohmann::json eventlog_preview_json(const EventLog& log, const std::vector<DropRecord>& dropped, std::size_t max_cases) {
    auto cases = nlohmann::json::array();
    for (std::size_t i = 0; i < log.cases.size() && i < max_cases; ++i) {
        auto events = nlohmann::json::array();
        for (const auto& e : log.cases[i].events)
            events.push_back({{"activity", e.activity}, {"start", format_iso_millis(e.start)}, {"end", format_iso_millis(e.end)}});
        cases.push_back({{"case_id", log.cases[i].case_id}, {"events", events}});
    }
    return {{"case_count", log.cases.size()},
            {"event_count", log.event_count()},
            {"cases", cases},
            {"dropped", drop_report_json(dropped)}};
}

} // namespace iotminer
