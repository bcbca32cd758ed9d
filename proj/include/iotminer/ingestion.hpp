#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotminer/error.hpp"
#include "iotminer/stats.hpp"
#include "iotminer/text.hpp"
#include "iotminer/time.hpp"

namespace iotminer {

enum class ChannelKind { Numeric, Boolean, Text };
enum class ChannelRole { Sensor, Metadata };

/// One named column of a SensorFrame. Numeric and boolean values live in `values`
/// (NaN marks a missing sample, booleans are 0/1); text columns use `text`.
struct Channel {
    std::string name;
    ChannelKind kind = ChannelKind::Numeric;
    ChannelRole role = ChannelRole::Sensor;
    std::vector<double> values;
    std::vector<std::string> text;

    std::size_t size() const { return kind == ChannelKind::Text ? text.size() : values.size(); }
    bool is_missing(std::size_t i) const {
        return kind == ChannelKind::Text ? text[i].empty() : std::isnan(values[i]);
    }

    friend bool operator==(const Channel& a, const Channel& b) {
        if (a.name != b.name || a.kind != b.kind || a.role != b.role || a.text != b.text ||
            a.values.size() != b.values.size())
            return false;
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            const bool na = std::isnan(a.values[i]);
            if (na != std::isnan(b.values[i]) || (!na && a.values[i] != b.values[i])) return false;
        }
        return true;
    }
};

/// Timestamped table of named channels. Immutable once handed to the pipeline.
class SensorFrame {
public:
    std::vector<Instant> timestamps;
    std::vector<Channel> channels;

    std::size_t rows() const { return timestamps.size(); }

    const Channel* find(std::string_view name) const {
        for (const auto& c : channels)
            if (c.name == name) return &c;
        return nullptr;
    }

    const Channel& at(std::string_view name) const {
        if (const auto* c = find(name)) return *c;
        fail(ErrorCode::UnknownChannel, "no channel named '" + std::string(name) + "'");
    }

    std::vector<std::string> channel_names() const {
        std::vector<std::string> names;
        for (const auto& c : channels) names.push_back(c.name);
        return names;
    }

    SensorFrame select_rows(std::span<const std::size_t> idx) const {
        SensorFrame out;
        out.timestamps.reserve(idx.size());
        for (auto i : idx) out.timestamps.push_back(timestamps[i]);
        for (const auto& c : channels) {
            Channel nc{c.name, c.kind, c.role, {}, {}};
            if (c.kind == ChannelKind::Text) {
                for (auto i : idx) nc.text.push_back(c.text[i]);
            } else {
                for (auto i : idx) nc.values.push_back(c.values[i]);
            }
            out.channels.push_back(std::move(nc));
        }
        return out;
    }

    friend bool operator==(const SensorFrame&, const SensorFrame&) = default;
};

enum class SourceKind { Delimited, JsonLines };

struct FormatDescriptor {
    SourceKind kind = SourceKind::Delimited;
    char delimiter = ',';
    std::string encoding = "utf-8";
    bool has_header = true;
    std::string timestamp_column;
    std::string timestamp_pattern = std::string(timefmt::kIso);
};

inline constexpr std::array<char, 4> kDelimiterCandidates = {',', ';', '\t', '|'};
inline constexpr std::size_t kDetectionSampleBytes = 64 * 1024;

namespace ingest_detail {

inline bool is_missing_token(std::string_view raw) {
    const auto s = text::trim(raw);
    return s.empty() || text::iequals(s, "na") || text::iequals(s, "nan") || text::iequals(s, "null");
}

inline std::optional<double> parse_boolean(std::string_view raw) {
    const auto s = text::trim(raw);
    if (s == "0" || text::iequals(s, "false")) return 0.0;
    if (s == "1" || text::iequals(s, "true")) return 1.0;
    return std::nullopt;
}

inline void append_utf8(std::string& out, unsigned cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t extra = c < 0x80 ? 0 : (c >> 5) == 0x6 ? 1 : (c >> 4) == 0xE ? 2 : (c >> 3) == 0x1E ? 3 : 99;
        if (extra == 99) return false;
        // A multi-byte sequence cut off by the sample boundary is not evidence of another encoding.
        if (i + extra >= s.size() && extra > 0) return true;
        for (std::size_t k = 1; k <= extra; ++k)
            if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
        i += extra + 1;
    }
    return true;
}

} // namespace ingest_detail

/// Identifies the byte encoding of `bytes` (BOM, UTF-8 validity, Latin-1 fallback).
inline std::string detect_encoding(std::string_view bytes) {
    if (bytes.size() >= 3 && bytes.substr(0, 3) == "\xEF\xBB\xBF") return "utf-8-sig";
    if (bytes.size() >= 2 && bytes.substr(0, 2) == "\xFF\xFE") return "utf-16le";
    if (bytes.size() >= 2 && bytes.substr(0, 2) == "\xFE\xFF") return "utf-16be";
    return ingest_detail::valid_utf8(bytes) ? "utf-8" : "latin-1";
}

/// Converts bytes in `encoding` to UTF-8 text without a byte-order mark.
inline std::string decode_to_utf8(std::string_view bytes, std::string_view encoding) {
    if (encoding == "utf-8") return std::string(bytes);
    if (encoding == "utf-8-sig") return std::string(bytes.substr(std::min<std::size_t>(3, bytes.size())));
    std::string out;
    if (encoding == "latin-1") {
        for (unsigned char c : bytes) ingest_detail::append_utf8(out, c);
        return out;
    }
    if (encoding == "utf-16le" || encoding == "utf-16be") {
        const bool le = encoding == "utf-16le";
        std::size_t i = bytes.size() >= 2 ? 2 : 0;
        auto unit = [&](std::size_t at) {
            const auto a = static_cast<unsigned char>(bytes[at]);
            const auto b = static_cast<unsigned char>(bytes[at + 1]);
            return le ? static_cast<unsigned>(a | (b << 8)) : static_cast<unsigned>((a << 8) | b);
        };
        while (i + 1 < bytes.size()) {
            unsigned cp = unit(i);
            i += 2;
            if (cp >= 0xD800 && cp < 0xDC00 && i + 1 < bytes.size()) {
                const unsigned lo = unit(i);
                i += 2;
                cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
            }
            ingest_detail::append_utf8(out, cp);
        }
        return out;
    }
    fail(ErrorCode::InvalidConfig, "unsupported encoding " + std::string(encoding));
}

namespace ingest_detail {

struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline RawTable parse_jsonl(std::string_view body) {
    RawTable table;
    std::map<std::string, std::size_t> index;
    std::vector<nlohmann::ordered_json> objects;
    for (const auto& line : text::split_lines(body)) {
        if (text::trim(line).empty()) continue;
        auto obj = nlohmann::ordered_json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) fail(ErrorCode::RaggedRow, "JSON-lines record is not an object");
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (index.emplace(it.key(), table.header.size()).second) table.header.push_back(it.key());
        }
        objects.push_back(std::move(obj));
    }
    for (const auto& obj : objects) {
        std::vector<std::string> row(table.header.size());
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            auto& cell = row[index[it.key()]];
            const auto& v = it.value();
            if (v.is_null()) cell.clear();
            else if (v.is_boolean()) cell = v.get<bool>() ? "true" : "false";
            else if (v.is_number_integer()) cell = std::to_string(v.get<long long>());
            else if (v.is_number()) cell = text::format_double(v.get<double>());
            else if (v.is_string()) cell = v.get<std::string>();
            else cell = v.dump();
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline bool looks_like_jsonl(std::string_view text_body) {
    for (const auto& line : text::split_lines(text_body)) {
        const auto t = text::trim(line);
        if (t.empty()) continue;
        return t.front() == '{';
    }
    return false;
}

inline bool parses_as_instant(std::string_view v) {
    for (auto p : timefmt::kCandidates)
        if (timefmt::parse(v, p)) return true;
    return false;
}

struct TimestampChoice {
    std::size_t column;
    std::string pattern;
};

// First column (in order) for which some pattern parses >= 95% of the sampled rows.
inline std::optional<TimestampChoice> choose_timestamp(const std::vector<std::vector<std::string>>& rows,
                                                       std::size_t columns, std::optional<std::size_t> only) {
    for (std::size_t c = 0; c < columns; ++c) {
        if (only && *only != c) continue;
        for (auto pattern : timefmt::kCandidates) {
            std::size_t ok = 0, total = 0;
            for (const auto& r : rows) {
                if (c >= r.size()) continue;
                ++total;
                if (timefmt::parse(r[c], pattern)) ++ok;
            }
            if (total > 0 && static_cast<double>(ok) >= 0.95 * static_cast<double>(total))
                return TimestampChoice{c, std::string(pattern)};
        }
    }
    return std::nullopt;
}

inline std::vector<std::string> default_names(std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("col_" + std::to_string(i));
    return names;
}

} // namespace ingest_detail

/// Per-delimiter field-count statistics over sampled lines; exposed for diagnostics and tests.
struct DelimiterScore {
    char delimiter;
    std::size_t modal_fields;
    double consistency; // fraction of lines whose field count equals the mode
};

inline std::vector<DelimiterScore> score_delimiters(const std::vector<std::string>& lines) {
    std::vector<DelimiterScore> scores;
    for (char d : kDelimiterCandidates) {
        std::map<std::size_t, std::size_t> counts;
        for (const auto& line : lines) counts[text::split_record(line, d).size()]++;
        std::size_t mode = 0, freq = 0;
        for (auto [fields, n] : counts) {
            if (n > freq) {
                mode = fields;
                freq = n;
            }
        }
        scores.push_back({d, mode, lines.empty() ? 0.0 : static_cast<double>(freq) / lines.size()});
    }
    return scores;
}

/// Sniffs encoding, layout, header presence and the timestamp column from a leading sample.
/// `forced_timestamp_column` restricts the timestamp search to that column name.
inline FormatDescriptor detect_format(std::string_view sample, std::optional<char> forced_delimiter = std::nullopt,
                                      std::optional<std::string> forced_timestamp_column = std::nullopt,
                                      bool sample_truncated = false) {
    if (sample.empty()) fail(ErrorCode::NoDelimiterFound, "empty sample");
    FormatDescriptor fmt;
    fmt.encoding = detect_encoding(sample);
    const auto body = decode_to_utf8(sample, fmt.encoding);
    auto lines = text::split_lines(body);
    if (sample_truncated && lines.size() > 1) lines.pop_back();
    std::erase_if(lines, [](const std::string& l) { return text::trim(l).empty(); });

    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    if (ingest_detail::looks_like_jsonl(body)) {
        fmt.kind = SourceKind::JsonLines;
        fmt.has_header = false;
        std::string joined;
        for (const auto& l : lines) joined += l + "\n";
        auto table = ingest_detail::parse_jsonl(joined);
        header = std::move(table.header);
        rows = std::move(table.rows);
    } else {
        if (forced_delimiter) {
            fmt.delimiter = *forced_delimiter;
        } else {
            std::optional<DelimiterScore> best;
            for (const auto& s : score_delimiters(lines)) {
                if (s.modal_fields < 2) continue;
                if (!best || s.consistency > best->consistency ||
                    (s.consistency == best->consistency && s.modal_fields > best->modal_fields))
                    best = s;
            }
            if (!best) fail(ErrorCode::NoDelimiterFound, "no candidate delimiter yields two consistent columns");
            fmt.delimiter = best->delimiter;
        }
        std::vector<std::vector<std::string>> records;
        for (const auto& l : lines) records.push_back(text::split_record(l, fmt.delimiter));
        if (records.empty()) fail(ErrorCode::NoDelimiterFound, "sample has no records");
        const auto& first = records.front();
        fmt.has_header = std::all_of(first.begin(), first.end(), [](const std::string& f) {
            const auto t = text::trim(f);
            return !t.empty() && !text::parse_double(t) && !ingest_detail::parses_as_instant(t);
        });
        header = fmt.has_header ? first : ingest_detail::default_names(first.size());
        rows.assign(records.begin() + (fmt.has_header ? 1 : 0), records.end());
    }
    for (auto& h : header) h = std::string(text::trim(h));

    std::optional<std::size_t> only;
    if (forced_timestamp_column) {
        auto it = std::find(header.begin(), header.end(), *forced_timestamp_column);
        if (it == header.end())
            fail(ErrorCode::NoTimestampColumn, "column '" + *forced_timestamp_column + "' not present");
        only = static_cast<std::size_t>(it - header.begin());
    }
    if (rows.empty()) {
        // Header-only sample: fall back to a column whose name suggests time.
        for (std::size_t c = 0; c < header.size(); ++c) {
            const auto name = text::lower(header[c]);
            if ((only && *only == c) || (!only && (name.find("time") != std::string::npos ||
                                                   name.find("date") != std::string::npos))) {
                fmt.timestamp_column = header[c];
                return fmt;
            }
        }
        fail(ErrorCode::NoTimestampColumn, "no rows to infer a timestamp column from");
    }
    auto choice = ingest_detail::choose_timestamp(rows, header.size(), only);
    if (!choice) fail(ErrorCode::NoTimestampColumn, "no column parses as an instant in >= 95% of sampled rows");
    fmt.timestamp_column = header[choice->column];
    fmt.timestamp_pattern = choice->pattern;
    return fmt;
}

struct LoadOptions {
    bool deduplicate_timestamps = false;
};

/// Parses the full source according to `fmt`, types every column and sorts rows by time (stable).
inline SensorFrame load_frame(std::string_view source, const FormatDescriptor& fmt, LoadOptions options = {}) {
    const auto body = decode_to_utf8(source, fmt.encoding);
    ingest_detail::RawTable table;
    if (fmt.kind == SourceKind::JsonLines) {
        table = ingest_detail::parse_jsonl(body);
    } else {
        auto lines = text::split_lines(body);
        std::erase_if(lines, [](const std::string& l) { return text::trim(l).empty(); });
        std::size_t first_data = 0;
        if (fmt.has_header && !lines.empty()) {
            table.header = text::split_record(lines.front(), fmt.delimiter);
            first_data = 1;
        } else if (!lines.empty()) {
            table.header = ingest_detail::default_names(text::split_record(lines.front(), fmt.delimiter).size());
        }
        for (auto& h : table.header) h = std::string(text::trim(h));
        for (std::size_t i = first_data; i < lines.size(); ++i) {
            auto rec = text::split_record(lines[i], fmt.delimiter);
            if (rec.size() != table.header.size())
                fail(ErrorCode::RaggedRow, "row " + std::to_string(i - first_data) + " has " +
                                               std::to_string(rec.size()) + " fields, expected " +
                                               std::to_string(table.header.size()));
            table.rows.push_back(std::move(rec));
        }
    }
    {
        std::set<std::string> seen;
        for (const auto& h : table.header)
            if (!seen.insert(h).second) fail(ErrorCode::InvalidConfig, "duplicate column name '" + h + "'");
    }
    auto ts_it = std::find(table.header.begin(), table.header.end(), fmt.timestamp_column);
    if (ts_it == table.header.end())
        fail(ErrorCode::NoTimestampColumn, "timestamp column '" + fmt.timestamp_column + "' not found");
    const auto ts_col = static_cast<std::size_t>(ts_it - table.header.begin());

    const std::size_t n = table.rows.size();
    std::vector<Instant> stamps(n);
    for (std::size_t r = 0; r < n; ++r) {
        auto t = timefmt::parse(table.rows[r][ts_col], fmt.timestamp_pattern);
        if (!t)
            fail(ErrorCode::TimestampParseError,
                 "row " + std::to_string(r) + ": cannot parse '" + table.rows[r][ts_col] + "'");
        stamps[r] = *t;
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return stamps[a] < stamps[b]; });
    if (options.deduplicate_timestamps) {
        std::vector<std::size_t> kept;
        for (auto i : order)
            if (kept.empty() || stamps[kept.back()] != stamps[i]) kept.push_back(i);
        order = std::move(kept);
    }

    SensorFrame frame;
    for (auto i : order) frame.timestamps.push_back(stamps[i]);
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (c == ts_col) continue;
        bool all_bool = true, all_num = true, any_value = false;
        for (auto i : order) {
            const auto& cell = table.rows[i][c];
            if (ingest_detail::is_missing_token(cell)) continue;
            any_value = true;
            if (!ingest_detail::parse_boolean(cell)) all_bool = false;
            if (!text::parse_double(cell)) all_num = false;
        }
        Channel ch;
        ch.name = table.header[c];
        if (any_value && all_bool) ch.kind = ChannelKind::Boolean;
        else if (all_num) ch.kind = ChannelKind::Numeric;
        else ch.kind = ChannelKind::Text;
        ch.role = ch.kind == ChannelKind::Text ? ChannelRole::Metadata : ChannelRole::Sensor;
        for (auto i : order) {
            const auto& cell = table.rows[i][c];
            if (ch.kind == ChannelKind::Text) {
                ch.text.push_back(ingest_detail::is_missing_token(cell) ? std::string{} : cell);
            } else if (ingest_detail::is_missing_token(cell)) {
                ch.values.push_back(std::numeric_limits<double>::quiet_NaN());
            } else if (ch.kind == ChannelKind::Boolean) {
                ch.values.push_back(*ingest_detail::parse_boolean(cell));
            } else {
                ch.values.push_back(*text::parse_double(cell));
            }
        }
        frame.channels.push_back(std::move(ch));
    }
    return frame;
}

/// Reads a file, sniffs its format from the leading bytes and loads it.
inline SensorFrame load_file(const std::filesystem::path& path, std::optional<char> delimiter = std::nullopt,
                             std::optional<std::string> timestamp_column = std::nullopt,
                             FormatDescriptor* detected = nullptr, LoadOptions options = {}) {
    const auto bytes = text::read_file(path);
    const bool truncated = bytes.size() > kDetectionSampleBytes;
    const auto sample = std::string_view(bytes).substr(0, kDetectionSampleBytes);
    auto fmt = detect_format(sample, delimiter, std::move(timestamp_column), truncated);
    if (detected) *detected = fmt;
    return load_frame(bytes, fmt, options);
}

/// Delimited text with an ISO millisecond timestamp column named `timestamp_name`; values use the
/// shortest round-trip representation so reloading is bit-exact.
inline std::string write_frame_csv(const SensorFrame& frame, std::string_view timestamp_name = "timestamp") {
    std::string out;
    std::vector<std::string> header{std::string(timestamp_name)};
    for (const auto& c : frame.channels) header.push_back(c.name);
    out += text::join_record(header) + "\n";
    for (std::size_t r = 0; r < frame.rows(); ++r) {
        std::vector<std::string> rec{format_iso_millis(frame.timestamps[r])};
        for (const auto& c : frame.channels) {
            if (c.kind == ChannelKind::Text) rec.push_back(c.text[r]);
            else if (c.kind == ChannelKind::Boolean && !std::isnan(c.values[r])) rec.push_back(c.values[r] != 0 ? "1" : "0");
            else rec.push_back(text::format_double(c.values[r]));
        }
        out += text::join_record(rec) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Missing-value repair

enum class InterpolationMethod { Linear, PreviousValue, ZeroFill };

inline std::string_view to_string(InterpolationMethod m) {
    switch (m) {
    case InterpolationMethod::Linear: return "linear";
    case InterpolationMethod::PreviousValue: return "previous-value";
    case InterpolationMethod::ZeroFill: return "zero-fill";
    }
    return "linear";
}

inline InterpolationMethod parse_interpolation_method(std::string_view s) {
    if (s == "linear") return InterpolationMethod::Linear;
    if (s == "previous-value" || s == "previous") return InterpolationMethod::PreviousValue;
    if (s == "zero-fill" || s == "zero") return InterpolationMethod::ZeroFill;
    fail(ErrorCode::InvalidConfig, "unknown interpolation method '" + std::string(s) + "'");
}

struct InterpolationPolicy {
    InterpolationMethod method = InterpolationMethod::Linear;
    std::size_t max_gap = 5;
    std::map<std::string, InterpolationMethod> per_channel_overrides;
};

struct GapRecord {
    std::string channel;
    std::size_t gap_start_index = 0;
    std::size_t gap_length = 0;

    friend bool operator==(const GapRecord&, const GapRecord&) = default;
};

struct RepairResult {
    SensorFrame frame;
    std::vector<GapRecord> unrepaired; ///< gaps longer than max_gap, left missing
};

/// Fills gaps of at most `max_gap` consecutive missing samples. Boolean channels always carry the
/// previous value forward. A gap touching either end of the series has only one neighbour and is
/// filled with that neighbour's value (zero-fill excepted).
inline RepairResult interpolate_missing(const SensorFrame& frame, const InterpolationPolicy& policy) {
    if (policy.max_gap < 1) fail(ErrorCode::InvalidConfig, "max_gap must be >= 1");
    RepairResult result{frame, {}};
    for (auto& ch : result.frame.channels) {
        if (ch.kind == ChannelKind::Text) continue;
        InterpolationMethod method = policy.method;
        if (auto it = policy.per_channel_overrides.find(ch.name); it != policy.per_channel_overrides.end())
            method = it->second;
        if (ch.kind == ChannelKind::Boolean) method = InterpolationMethod::PreviousValue;
        auto& v = ch.values;
        const std::size_t n = v.size();
        std::size_t i = 0;
        while (i < n) {
            if (!std::isnan(v[i])) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < n && std::isnan(v[j])) ++j;
            const std::size_t len = j - i;
            const bool has_left = i > 0;
            const bool has_right = j < n;
            if (len > policy.max_gap || (!has_left && !has_right && method != InterpolationMethod::ZeroFill)) {
                result.unrepaired.push_back({ch.name, i, len});
                i = j;
                continue;
            }
            for (std::size_t k = i; k < j; ++k) {
                switch (method) {
                case InterpolationMethod::ZeroFill:
                    v[k] = 0.0;
                    break;
                case InterpolationMethod::PreviousValue:
                    v[k] = has_left ? v[i - 1] : v[j];
                    break;
                case InterpolationMethod::Linear:
                    if (has_left && has_right) {
                        const double frac = static_cast<double>(k - i + 1) / static_cast<double>(len + 1);
                        v[k] = v[i - 1] + frac * (v[j] - v[i - 1]);
                    } else {
                        v[k] = has_left ? v[i - 1] : v[j];
                    }
                    break;
                }
            }
            i = j;
        }
    }
    return result;
}

inline nlohmann::json repair_summary_json(const std::vector<GapRecord>& gaps) {
    auto arr = nlohmann::json::array();
    for (const auto& g : gaps)
        arr.push_back({{"channel", g.channel}, {"gap_start_index", g.gap_start_index}, {"gap_length", g.gap_length}});
    return arr;
}

/// Drops rows that still hold a missing value in any of `channels`; returns the kept row indices.
inline std::vector<std::size_t> complete_rows(const SensorFrame& frame, const std::vector<std::string>& channels) {
    std::vector<const Channel*> cols;
    for (const auto& name : channels) cols.push_back(&frame.at(name));
    std::vector<std::size_t> kept;
    for (std::size_t r = 0; r < frame.rows(); ++r) {
        if (std::none_of(cols.begin(), cols.end(), [&](const Channel* c) { return c->is_missing(r); }))
            kept.push_back(r);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Sensor selection

inline constexpr std::array<std::string_view, 5> kMetadataNamePatterns = {"time", "date", "id", "uuid", "name"};

inline bool looks_like_metadata_name(std::string_view name) {
    const auto l = text::lower(name);
    return std::any_of(kMetadataNamePatterns.begin(), kMetadataNamePatterns.end(),
                       [&](std::string_view p) { return l.find(p) != std::string::npos; });
}

/// Variation measure used for selection: coefficient of variation for numeric channels
/// (+inf when the mean is zero but values vary), distinct-value count for booleans.
inline double channel_variation(const Channel& ch) {
    std::vector<double> present;
    for (double v : ch.values)
        if (!std::isnan(v)) present.push_back(v);
    if (present.empty()) return 0.0;
    if (ch.kind == ChannelKind::Boolean) {
        std::set<double> distinct(present.begin(), present.end());
        return static_cast<double>(distinct.size());
    }
    const double sd = stats::pstdev(present);
    const double m = stats::mean(present);
    if (sd == 0.0) return 0.0;
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return sd / std::abs(m);
}

inline bool is_constant(const Channel& ch) {
    std::optional<double> first;
    for (double v : ch.values) {
        if (std::isnan(v)) continue;
        if (!first) first = v;
        else if (v != *first) return false;
    }
    return true;
}

inline std::vector<std::string> select_sensor_columns(const SensorFrame& frame, double min_variation) {
    std::vector<std::string> out;
    bool any_numeric = false;
    for (const auto& ch : frame.channels) {
        if (ch.kind == ChannelKind::Text || ch.role == ChannelRole::Metadata) continue;
        any_numeric = true;
        if (looks_like_metadata_name(ch.name) || is_constant(ch)) continue;
        if (channel_variation(ch) > min_variation) out.push_back(ch.name);
    }
    if (!any_numeric) fail(ErrorCode::NoSensorColumns, "frame has no numeric or boolean channels");
    if (out.empty()) fail(ErrorCode::NoSensorColumns, "no channel passes the variation filter");
    return out;
}

} // namespace iotminer
