#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "iotminer/error.hpp"

namespace iotminer {

/// Instants are UTC with millisecond resolution, which is also the precision XES carries.
using Instant = std::chrono::sys_time<std::chrono::milliseconds>;
using Duration = std::chrono::milliseconds;

namespace timefmt {

inline constexpr std::string_view kIso = "%Y-%m-%dT%H:%M:%S";
inline constexpr std::string_view kCompact = "%y%m%dT%H:%M:%S";
inline constexpr std::string_view kEpochSeconds = "epoch_s";
inline constexpr std::string_view kEpochMillis = "epoch_ms";

/// Detection order; the first pattern that parses enough rows wins.
inline constexpr std::array<std::string_view, 4> kCandidates = {kIso, kCompact, kEpochSeconds, kEpochMillis};

namespace detail {

inline bool digits(std::string_view s, std::size_t pos, std::size_t count, int& out) {
    if (pos + count > s.size()) return false;
    int v = 0;
    for (std::size_t i = pos; i < pos + count; ++i) {
        const char c = s[i];
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    out = v;
    return true;
}

inline std::optional<Instant> make_instant(int y, int mo, int d, int h, int mi, int s, int ms) {
    using namespace std::chrono;
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60) return std::nullopt;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return std::nullopt;
    return Instant{sys_days{ymd}} + hours{h} + minutes{mi} + seconds{s} + milliseconds{ms};
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// Parses [.fff][Z|+hh:mm|-hh:mm] starting at pos; returns adjusted instant.
inline std::optional<Instant> parse_tail(std::string_view s, std::size_t pos, Instant base) {
    int ms = 0;
    if (pos < s.size() && (s[pos] == '.' || s[pos] == ',')) {
        ++pos;
        int scale = 100;
        bool any = false;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            ms += (s[pos] - '0') * scale;
            scale /= 10;
            ++pos;
            any = true;
        }
        if (!any) return std::nullopt;
    }
    base += Duration{ms};
    if (pos == s.size()) return base;
    if (s[pos] == 'Z' && pos + 1 == s.size()) return base;
    if (s[pos] == '+' || s[pos] == '-') {
        const int sign = s[pos] == '+' ? 1 : -1;
        int oh = 0, om = 0;
        if (!digits(s, pos + 1, 2, oh)) return std::nullopt;
        std::size_t next = pos + 3;
        if (next < s.size() && s[next] == ':') ++next;
        if (next < s.size()) {
            if (!digits(s, next, 2, om) || next + 2 != s.size()) return std::nullopt;
        }
        return base - sign * (std::chrono::hours{oh} + std::chrono::minutes{om});
    }
    return std::nullopt;
}

inline std::optional<double> parse_plain_number(std::string_view s) {
    double v = 0.0;
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) return std::nullopt;
    return v;
}

} // namespace detail

/// ISO-8601 `YYYY-MM-DD[T| ]HH:MM:SS[.fff][Z|±hh:mm]`; a bare date is accepted as midnight.
inline std::optional<Instant> parse_iso(std::string_view raw) {
    const auto s = detail::trim(raw);
    int y, mo, d, h = 0, mi = 0, sec = 0;
    if (!detail::digits(s, 0, 4, y) || s.size() < 10 || s[4] != '-' || !detail::digits(s, 5, 2, mo) || s[7] != '-' ||
        !detail::digits(s, 8, 2, d))
        return std::nullopt;
    if (s.size() == 10) return detail::make_instant(y, mo, d, 0, 0, 0, 0);
    if (s.size() < 19 || (s[10] != 'T' && s[10] != ' ') || !detail::digits(s, 11, 2, h) || s[13] != ':' ||
        !detail::digits(s, 14, 2, mi) || s[16] != ':' || !detail::digits(s, 17, 2, sec))
        return std::nullopt;
    auto base = detail::make_instant(y, mo, d, h, mi, sec, 0);
    if (!base) return std::nullopt;
    return detail::parse_tail(s, 19, *base);
}

/// `yymmddTHH:MM:SS`, two-digit years map to 20yy.
inline std::optional<Instant> parse_compact(std::string_view raw) {
    const auto s = detail::trim(raw);
    int y, mo, d, h, mi, sec;
    if (s.size() < 15 || !detail::digits(s, 0, 2, y) || !detail::digits(s, 2, 2, mo) || !detail::digits(s, 4, 2, d) ||
        s[6] != 'T' || !detail::digits(s, 7, 2, h) || s[9] != ':' || !detail::digits(s, 10, 2, mi) || s[12] != ':' ||
        !detail::digits(s, 13, 2, sec))
        return std::nullopt;
    auto base = detail::make_instant(2000 + y, mo, d, h, mi, sec, 0);
    if (!base) return std::nullopt;
    return detail::parse_tail(s, 15, *base);
}

// Epoch values are range-checked so ordinary sensor readings are not mistaken for instants.
inline std::optional<Instant> parse_epoch_seconds(std::string_view raw) {
    const auto v = detail::parse_plain_number(detail::trim(raw));
    if (!v || !(*v >= 1e8 && *v < 1e10)) return std::nullopt;
    return Instant{Duration{static_cast<long long>(std::llround(*v * 1000.0))}};
}

inline std::optional<Instant> parse_epoch_millis(std::string_view raw) {
    const auto v = detail::parse_plain_number(detail::trim(raw));
    if (!v || !(*v >= 1e11 && *v < 1e13)) return std::nullopt;
    return Instant{Duration{static_cast<long long>(std::llround(*v))}};
}

inline std::optional<Instant> parse(std::string_view value, std::string_view pattern) {
    if (pattern == kIso) return parse_iso(value);
    if (pattern == kCompact) return parse_compact(value);
    if (pattern == kEpochSeconds) return parse_epoch_seconds(value);
    if (pattern == kEpochMillis) return parse_epoch_millis(value);
    return std::nullopt;
}

inline bool is_known_pattern(std::string_view pattern) {
    for (auto p : kCandidates)
        if (p == pattern) return true;
    return false;
}

} // namespace timefmt

/// `YYYY-MM-DDTHH:MM:SS.fffZ`
inline std::string format_iso_millis(Instant t) {
    using namespace std::chrono;
    const auto day_point = floor<days>(t);
    const year_month_day ymd{day_point};
    const auto in_day = t - day_point;
    const auto h = duration_cast<hours>(in_day);
    const auto m = duration_cast<minutes>(in_day - h);
    const auto s = duration_cast<seconds>(in_day - h - m);
    const auto ms = in_day - h - m - s;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(h.count()),
                  static_cast<int>(m.count()), static_cast<int>(s.count()), static_cast<int>(ms.count()));
    return buf;
}

inline Instant parse_instant_or_throw(std::string_view text) {
    if (auto t = timefmt::parse_iso(text)) return *t;
    if (auto t = timefmt::parse_compact(text)) return *t;
    if (auto t = timefmt::parse_epoch_millis(text)) return *t;
    if (auto t = timefmt::parse_epoch_seconds(text)) return *t;
    fail(ErrorCode::TimestampParseError, "cannot parse instant '" + std::string(text) + "'");
}

inline double seconds_between(Instant a, Instant b) {
    return std::chrono::duration<double>(b - a).count();
}

/// Durations like `15m`, `8h`, `30s`, `1d`, `250ms` or a bare number of seconds.
inline std::optional<Duration> parse_duration(std::string_view text) {
    text = timefmt::detail::trim(text);
    if (text.empty()) return std::nullopt;
    std::size_t split = 0;
    while (split < text.size() && ((text[split] >= '0' && text[split] <= '9') || text[split] == '.')) ++split;
    const auto number = timefmt::detail::parse_plain_number(text.substr(0, split));
    if (!number || *number < 0) return std::nullopt;
    const auto unit = text.substr(split);
    double scale_ms = 0;
    if (unit.empty() || unit == "s") scale_ms = 1000.0;
    else if (unit == "ms") scale_ms = 1.0;
    else if (unit == "m" || unit == "min") scale_ms = 60'000.0;
    else if (unit == "h") scale_ms = 3'600'000.0;
    else if (unit == "d") scale_ms = 86'400'000.0;
    else return std::nullopt;
    return Duration{static_cast<long long>(std::llround(*number * scale_ms))};
}

} // namespace iotminer
