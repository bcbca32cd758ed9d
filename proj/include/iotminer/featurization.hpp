#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotminer/error.hpp"
#include "iotminer/ingestion.hpp"
#include "iotminer/matrix.hpp"
#include "iotminer/stats.hpp"

namespace iotminer {

enum class WindowStat { Mean, Std, Min, Max };

inline std::string_view to_string(WindowStat s) {
    switch (s) {
    case WindowStat::Mean: return "mean";
    case WindowStat::Std: return "std";
    case WindowStat::Min: return "min";
    case WindowStat::Max: return "max";
    }
    return "mean";
}

inline WindowStat parse_window_stat(std::string_view s) {
    if (s == "mean") return WindowStat::Mean;
    if (s == "std") return WindowStat::Std;
    if (s == "min") return WindowStat::Min;
    if (s == "max") return WindowStat::Max;
    fail(ErrorCode::InvalidConfig, "unknown window statistic '" + std::string(s) + "'");
}

struct FeatureSpec {
    std::vector<std::string> base_channels;
    bool add_differential_coding = false;
    double differential_epsilon = 0.0;
    std::vector<int> derivative_orders; ///< subset of {1, 2}
    std::size_t window = 1;             ///< 1 disables sliding aggregation
    std::vector<WindowStat> window_stats;

    void validate() const {
        if (base_channels.empty()) fail(ErrorCode::InvalidConfig, "feature spec needs at least one base channel");
        if (window < 1) fail(ErrorCode::InvalidConfig, "window must be >= 1");
        for (int o : derivative_orders)
            if (o != 1 && o != 2) fail(ErrorCode::InvalidConfig, "derivative order must be 1 or 2");
        if (differential_epsilon < 0) fail(ErrorCode::InvalidConfig, "differential epsilon must be >= 0");
    }
};

inline nlohmann::json to_json(const FeatureSpec& spec) {
    nlohmann::json j;
    j["base_channels"] = spec.base_channels;
    j["add_differential_coding"] = spec.add_differential_coding;
    j["differential_epsilon"] = spec.differential_epsilon;
    j["derivative_orders"] = spec.derivative_orders;
    j["window"] = spec.window;
    auto stats = nlohmann::json::array();
    for (auto s : spec.window_stats) stats.push_back(std::string(to_string(s)));
    j["window_stats"] = stats;
    return j;
}

inline FeatureSpec feature_spec_from_json(const nlohmann::json& j) {
    FeatureSpec spec;
    spec.base_channels = j.value("base_channels", std::vector<std::string>{});
    spec.add_differential_coding = j.value("add_differential_coding", false);
    spec.differential_epsilon = j.value("differential_epsilon", 0.0);
    spec.derivative_orders = j.value("derivative_orders", std::vector<int>{});
    spec.window = j.value("window", std::size_t{1});
    for (const auto& s : j.value("window_stats", std::vector<std::string>{})) spec.window_stats.push_back(parse_window_stat(s));
    return spec;
}

// ---------------------------------------------------------------------------
// Per-series features

/// 1 where the step from the previous sample exceeds epsilon (strictly), else 0; the first output is 0.
inline std::vector<double> differential_code(std::span<const double> series, double epsilon = 0.0) {
    if (series.size() < 2) fail(ErrorCode::SeriesTooShort, "differential coding needs at least two samples");
    std::vector<double> out(series.size(), 0.0);
    for (std::size_t i = 1; i < series.size(); ++i) out[i] = std::abs(series[i] - series[i - 1]) > epsilon ? 1.0 : 0.0;
    return out;
}

/// Backward-difference derivative of order 1 or 2; `dt[i - 1]` is the duration between samples
/// i - 1 and i. The first `order` positions are warm-up and hold 0.
inline std::vector<double> derivative(std::span<const double> series, std::span<const double> dt, int order) {
    if (order != 1 && order != 2) fail(ErrorCode::InvalidConfig, "derivative order must be 1 or 2");
    if (series.size() < static_cast<std::size_t>(order) + 1)
        fail(ErrorCode::SeriesTooShort, "series too short for derivative order " + std::to_string(order));
    if (dt.size() + 1 != series.size()) fail(ErrorCode::LengthMismatch, "dt must have one entry per step");
    for (double d : dt)
        if (!(d > 0)) fail(ErrorCode::NonPositiveDt, "all step durations must be positive");
    std::vector<double> first(series.size(), 0.0);
    for (std::size_t i = 1; i < series.size(); ++i) first[i] = (series[i] - series[i - 1]) / dt[i - 1];
    if (order == 1) return first;
    std::vector<double> second(series.size(), 0.0);
    for (std::size_t i = 2; i < series.size(); ++i) second[i] = (first[i] - first[i - 1]) / dt[i - 1];
    return second;
}

/// Trailing-window statistic; the first window - 1 outputs use the shorter available prefix.
/// Std is the population standard deviation of the window.
inline std::vector<double> sliding_aggregate(std::span<const double> series, std::size_t window, WindowStat stat) {
    if (series.empty()) fail(ErrorCode::EmptySeries, "sliding aggregation of an empty series");
    if (window < 1 || window > series.size()) fail(ErrorCode::InvalidConfig, "window must be in [1, series length]");
    std::vector<double> out(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        const std::size_t start = i + 1 >= window ? i + 1 - window : 0;
        const auto w = series.subspan(start, i - start + 1);
        switch (stat) {
        case WindowStat::Mean: out[i] = stats::mean(w); break;
        case WindowStat::Std: out[i] = stats::pstdev(w); break;
        case WindowStat::Min: out[i] = *std::min_element(w.begin(), w.end()); break;
        case WindowStat::Max: out[i] = *std::max_element(w.begin(), w.end()); break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormalizationKind { None, Standard, MinMax, Robust };

inline std::string_view to_string(NormalizationKind k) {
    switch (k) {
    case NormalizationKind::None: return "none";
    case NormalizationKind::Standard: return "standard";
    case NormalizationKind::MinMax: return "minmax";
    case NormalizationKind::Robust: return "robust";
    }
    return "none";
}

inline NormalizationKind parse_normalization(std::string_view s) {
    if (s == "none") return NormalizationKind::None;
    if (s == "standard") return NormalizationKind::Standard;
    if (s == "minmax") return NormalizationKind::MinMax;
    if (s == "robust") return NormalizationKind::Robust;
    fail(ErrorCode::InvalidConfig, "unknown normalization '" + std::string(s) + "'");
}

/// Fitted per-column affine map x -> (x - center) / scale.
/// standard: center = mean, scale = population std; minmax: center = min, scale = max - min;
/// robust: center = median, scale = Q3 - Q1. The raw statistics are kept for export.
struct Normalizer {
    NormalizationKind kind = NormalizationKind::None;
    std::vector<double> center;
    std::vector<double> scale;
    std::vector<nlohmann::json> params; ///< per-column statistics named by method

    bool fitted() const { return kind == NormalizationKind::None || !center.empty(); }
};

inline Normalizer fit_normalizer(const Matrix& m, NormalizationKind kind) {
    if (m.rows() < 2) fail(ErrorCode::SeriesTooShort, "normalizer fitting needs at least two rows");
    Normalizer n;
    n.kind = kind;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        auto col = m.column(c);
        double center = 0.0, scale = 1.0;
        nlohmann::json p;
        switch (kind) {
        case NormalizationKind::None:
            p = nlohmann::json::object();
            break;
        case NormalizationKind::Standard:
            center = stats::mean(col);
            scale = stats::pstdev(col);
            p = {{"mean", center}, {"std", scale}};
            break;
        case NormalizationKind::MinMax: {
            const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
            center = *lo;
            scale = *hi - *lo;
            p = {{"min", *lo}, {"max", *hi}};
            break;
        }
        case NormalizationKind::Robust: {
            std::sort(col.begin(), col.end());
            const double q1 = stats::quantile_sorted(col, 0.25);
            const double q3 = stats::quantile_sorted(col, 0.75);
            center = stats::quantile_sorted(col, 0.5);
            scale = q3 - q1;
            p = {{"median", center}, {"q1", q1}, {"q3", q3}, {"iqr", scale}};
            break;
        }
        }
        n.center.push_back(center);
        n.scale.push_back(scale);
        n.params.push_back(std::move(p));
    }
    return n;
}

/// Zero-scale columns map to all zeros.
inline Matrix apply_normalizer(const Matrix& m, const Normalizer& n) {
    if (n.kind == NormalizationKind::None) return m;
    if (n.center.size() != m.cols())
        fail(ErrorCode::ColumnCountMismatch, "normalizer fitted on " + std::to_string(n.center.size()) +
                                                 " columns, matrix has " + std::to_string(m.cols()));
    Matrix out(m.rows(), m.cols());
    for (std::size_t c = 0; c < m.cols(); ++c) {
        const double scale = n.scale[c];
        for (std::size_t r = 0; r < m.rows(); ++r) out(r, c) = scale == 0.0 ? 0.0 : (m(r, c) - n.center[c]) / scale;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feature matrix

struct FeatureMatrix {
    Matrix rows;
    std::vector<Instant> row_timestamps;
    std::vector<std::string> column_names;
    Normalizer normalization; ///< kind None until normalized
};

inline std::vector<double> step_durations(const std::vector<Instant>& stamps) {
    std::vector<double> dt;
    for (std::size_t i = 1; i < stamps.size(); ++i) dt.push_back(seconds_between(stamps[i - 1], stamps[i]));
    return dt;
}

/// Columns: base channels, differential codes, derivatives (order 1 then 2), window statistics.
/// Base columns keep the channel name; derived ones are `<channel>__<feature>`.
inline FeatureMatrix build_feature_matrix(const SensorFrame& frame, const FeatureSpec& spec) {
    spec.validate();
    std::vector<std::vector<double>> columns;
    std::vector<std::string> names;
    std::vector<const Channel*> base;
    for (const auto& name : spec.base_channels) {
        const auto& ch = frame.at(name);
        if (ch.kind == ChannelKind::Text) fail(ErrorCode::UnknownChannel, "channel '" + name + "' is not numeric");
        for (double v : ch.values)
            if (std::isnan(v)) fail(ErrorCode::MissingValues, "channel '" + name + "' still has missing values");
        base.push_back(&ch);
    }
    for (const auto* ch : base) {
        columns.push_back(ch->values);
        names.push_back(ch->name);
    }
    if (spec.add_differential_coding) {
        for (const auto* ch : base) {
            columns.push_back(differential_code(ch->values, spec.differential_epsilon));
            names.push_back(ch->name + "__diffcode");
        }
    }
    if (!spec.derivative_orders.empty()) {
        const auto dt = step_durations(frame.timestamps);
        const std::set<int> orders(spec.derivative_orders.begin(), spec.derivative_orders.end());
        for (int order : orders) {
            for (const auto* ch : base) {
                columns.push_back(derivative(ch->values, dt, order));
                names.push_back(ch->name + "__deriv" + std::to_string(order));
            }
        }
    }
    if (spec.window > 1) {
        const std::set<WindowStat> chosen(spec.window_stats.begin(), spec.window_stats.end());
        for (auto stat : {WindowStat::Mean, WindowStat::Std, WindowStat::Min, WindowStat::Max}) {
            if (!chosen.contains(stat)) continue;
            for (const auto* ch : base) {
                columns.push_back(sliding_aggregate(ch->values, std::min(spec.window, ch->values.size()), stat));
                names.push_back(ch->name + "__" + std::string(to_string(stat)) + "_w" + std::to_string(spec.window));
            }
        }
    }
    FeatureMatrix fm;
    fm.rows = Matrix(frame.rows(), columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) fm.rows.set_column(c, columns[c]);
    fm.row_timestamps = frame.timestamps;
    fm.column_names = std::move(names);
    return fm;
}

inline FeatureMatrix normalize(const FeatureMatrix& fm, NormalizationKind kind) {
    FeatureMatrix out;
    out.normalization = fit_normalizer(fm.rows, kind);
    out.rows = apply_normalizer(fm.rows, out.normalization);
    out.row_timestamps = fm.row_timestamps;
    out.column_names = fm.column_names;
    return out;
}

/// JSON sidecar written next to the delimited matrix.
inline nlohmann::json feature_sidecar(const FeatureMatrix& fm) {
    nlohmann::json j;
    j["column_names"] = fm.column_names;
    j["normalization"] = std::string(to_string(fm.normalization.kind));
    j["fitted_params"] = fm.normalization.params;
    return j;
}

inline std::string write_feature_csv(const FeatureMatrix& fm) {
    std::vector<std::string> header{"timestamp"};
    header.insert(header.end(), fm.column_names.begin(), fm.column_names.end());
    std::string out = text::join_record(header) + "\n";
    for (std::size_t r = 0; r < fm.rows.rows(); ++r) {
        std::vector<std::string> rec{format_iso_millis(fm.row_timestamps[r])};
        for (double v : fm.rows.row(r)) rec.push_back(text::format_double(v));
        out += text::join_record(rec) + "\n";
    }
    return out;
}

/// Inverse of write_feature_csv; the optional sidecar restores normalization metadata.
inline FeatureMatrix read_feature_csv(std::string_view body, const nlohmann::json* sidecar = nullptr) {
    auto lines = text::split_lines(body);
    std::erase_if(lines, [](const std::string& l) { return text::trim(l).empty(); });
    if (lines.empty()) fail(ErrorCode::IoError, "feature file is empty");
    FeatureMatrix fm;
    auto header = text::split_record(lines.front(), ',');
    fm.column_names.assign(header.begin() + 1, header.end());
    fm.rows = Matrix(lines.size() - 1, fm.column_names.size());
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto rec = text::split_record(lines[i], ',');
        if (rec.size() != header.size()) fail(ErrorCode::RaggedRow, "feature row " + std::to_string(i - 1));
        fm.row_timestamps.push_back(parse_instant_or_throw(rec[0]));
        for (std::size_t c = 1; c < rec.size(); ++c) {
            auto v = text::parse_double(rec[c]);
            if (!v) fail(ErrorCode::MissingValues, "feature row " + std::to_string(i - 1) + " has a non-numeric value");
            fm.rows(i - 1, c - 1) = *v;
        }
    }
    if (sidecar && sidecar->contains("normalization")) {
        auto& norm = fm.normalization;
        norm.kind = parse_normalization(sidecar->at("normalization").get<std::string>());
        for (const auto& p : sidecar->value("fitted_params", nlohmann::json::array())) {
            norm.params.push_back(p);
            switch (norm.kind) {
            case NormalizationKind::Standard:
                norm.center.push_back(p.at("mean"));
                norm.scale.push_back(p.at("std"));
                break;
            case NormalizationKind::MinMax:
                norm.center.push_back(p.at("min"));
                norm.scale.push_back(p.at("max").get<double>() - p.at("min").get<double>());
                break;
            case NormalizationKind::Robust:
                norm.center.push_back(p.at("median"));
                norm.scale.push_back(p.at("iqr"));
                break;
            case NormalizationKind::None:
                break;
            }
        }
    }
    return fm;
}

} // namespace iotminer
