#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotminer/clustering.hpp"
#include "iotminer/error.hpp"
#include "iotminer/ingestion.hpp"
#include "iotminer/labeling.hpp"
#include "iotminer/text.hpp"
#include "iotminer/time.hpp"

namespace iotminer {

struct ModeSpec {
    std::string name;
    std::vector<double> mean; ///< one per channel
    std::vector<double> std;  ///< one per channel
    double dwell_min_s = 30;
    double dwell_max_s = 90;
    std::vector<std::string> variants; ///< alternative names used by the mock labeler
};

/// Duty-cycle generator settings. The cycle repeats `cycle_order`; before each step an idle mode
/// (and, more rarely, a stop mode) may be inserted.
struct DutyCycleSpec {
    std::vector<std::string> channels;
    std::vector<ModeSpec> modes;
    std::vector<std::string> cycle_order;
    std::string idle_mode = "Idling";
    double idle_insert_prob = 0.15;
    std::string stop_mode = "Stopped";
    double stop_insert_prob = 0.05;
    double sample_interval_s = 1.0;
    double total_duration_s = 6000.0;
    double noise_std = 1.0;
    double ar1_phi = 0.0; ///< 0 disables within-mode AR(1) smoothing
    std::string start = "2024-10-01T06:00:00Z";
    std::string machine_id = "LHD-07";
    std::uint64_t seed = 42;

    std::size_t mode_index(std::string_view name) const {
        for (std::size_t i = 0; i < modes.size(); ++i)
            if (modes[i].name == name) return i;
        fail(ErrorCode::InvalidConfig, "unknown mode '" + std::string(name) + "'");
    }

    void validate() const {
        if (channels.empty()) fail(ErrorCode::InvalidConfig, "synth spec needs channels");
        if (modes.empty()) fail(ErrorCode::InvalidConfig, "synth spec needs modes");
        for (const auto& m : modes) {
            if (m.mean.size() != channels.size() || m.std.size() != channels.size())
                fail(ErrorCode::InvalidConfig, "mode '" + m.name + "' needs one mean and std per channel");
            for (double s : m.std)
                if (!(s >= 0)) fail(ErrorCode::InvalidConfig, "mode '" + m.name + "' has a negative std");
            if (!(m.dwell_min_s > 0) || !(m.dwell_min_s <= m.dwell_max_s))
                fail(ErrorCode::InvalidConfig, "mode '" + m.name + "' needs 0 < dwell_min <= dwell_max");
        }
        if (cycle_order.empty()) fail(ErrorCode::InvalidConfig, "cycle_order is empty");
        for (const auto& c : cycle_order) (void)mode_index(c);
        if (idle_insert_prob > 0) (void)mode_index(idle_mode);
        if (stop_insert_prob > 0) (void)mode_index(stop_mode);
        if (!(idle_insert_prob >= 0 && stop_insert_prob >= 0 && idle_insert_prob + stop_insert_prob <= 1))
            fail(ErrorCode::InvalidConfig, "insertion probabilities must be non-negative and sum to <= 1");
        if (!(sample_interval_s > 0)) fail(ErrorCode::InvalidConfig, "sample_interval must be positive");
        if (!(total_duration_s >= sample_interval_s)) fail(ErrorCode::InvalidConfig, "total_duration shorter than one sample");
        if (!(noise_std >= 0)) fail(ErrorCode::InvalidConfig, "noise_std must be >= 0");
        if (!(ar1_phi >= 0 && ar1_phi < 1)) fail(ErrorCode::InvalidConfig, "ar1_phi must lie in [0, 1)");
        if (!timefmt::parse_iso(start)) fail(ErrorCode::InvalidConfig, "start must be an ISO-8601 instant");
    }
};

/// Loader-haul-dump machine with five engine signals. Means are separability placeholders,
/// spread by at least ten intra-mode standard deviations on some channel.
inline DutyCycleSpec default_duty_cycle() {
    DutyCycleSpec s;
    s.channels = {"accelerator_pedal_pct", "engine_speed_rpm", "engine_oil_pressure_kpa", "fuel_rate_lph",
                  "engine_torque_pct"};
    //              APP    ES      OP     FR    TQ
    s.modes = {
        {"Idling", {2, 750, 220, 5, 12}, {0.8, 15, 5, 0.4, 1.0}, 20, 60, {"Engine Idle", "Idle", "Standby"}},
        {"Loading", {65, 1850, 430, 42, 88}, {2.0, 30, 8, 1.2, 2.0}, 25, 50, {"Bucket Loading", "Mucking", "Loading Material"}},
        {"Hauling Loaded", {85, 2150, 480, 58, 70}, {2.0, 30, 8, 1.2, 2.0}, 60, 150,
         {"Tramming Loaded", "Loaded Haul", "Transporting Ore"}},
        {"Dumping", {30, 1350, 360, 22, 45}, {2.0, 30, 8, 1.0, 2.0}, 15, 35, {"Unloading", "Tipping", "Dumping Load"}},
        {"Returning Empty", {55, 1750, 420, 28, 30}, {2.0, 30, 8, 1.0, 2.0}, 50, 130,
         {"Tramming Empty", "Empty Haul", "Return Trip"}},
        {"Stopped", {0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}, 30, 120, {"Engine Off", "Shutdown", "Parked"}},
    };
    s.cycle_order = {"Loading", "Hauling Loaded", "Dumping", "Returning Empty"};
    return s;
}

inline nlohmann::json to_json(const DutyCycleSpec& s) {
    auto modes = nlohmann::json::array();
    for (const auto& m : s.modes)
        modes.push_back({{"name", m.name},
                         {"mean", m.mean},
                         {"std", m.std},
                         {"dwell_min_s", m.dwell_min_s},
                         {"dwell_max_s", m.dwell_max_s},
                         {"variants", m.variants}});
    return {{"channels", s.channels},
            {"modes", modes},
            {"cycle_order", s.cycle_order},
            {"idle_mode", s.idle_mode},
            {"idle_insert_prob", s.idle_insert_prob},
            {"stop_mode", s.stop_mode},
            {"stop_insert_prob", s.stop_insert_prob},
            {"sample_interval_s", s.sample_interval_s},
            {"total_duration_s", s.total_duration_s},
            {"noise_std", s.noise_std},
            {"ar1_phi", s.ar1_phi},
            {"start", s.start},
            {"machine_id", s.machine_id},
            {"seed", s.seed}};
}

/// Missing keys keep the default-spec values.
inline DutyCycleSpec duty_cycle_from_json(const nlohmann::json& j) {
    DutyCycleSpec s = default_duty_cycle();
    try {
        if (j.contains("channels")) s.channels = j.at("channels").get<std::vector<std::string>>();
        if (j.contains("modes")) {
            s.modes.clear();
            for (const auto& m : j.at("modes"))
                s.modes.push_back({m.at("name").get<std::string>(), m.at("mean").get<std::vector<double>>(),
                                   m.at("std").get<std::vector<double>>(), m.value("dwell_min_s", 30.0),
                                   m.value("dwell_max_s", 90.0), m.value("variants", std::vector<std::string>{})});
        }
        if (j.contains("cycle_order")) s.cycle_order = j.at("cycle_order").get<std::vector<std::string>>();
        s.idle_mode = j.value("idle_mode", s.idle_mode);
        s.idle_insert_prob = j.value("idle_insert_prob", s.idle_insert_prob);
        s.stop_mode = j.value("stop_mode", s.stop_mode);
        s.stop_insert_prob = j.value("stop_insert_prob", s.stop_insert_prob);
        s.sample_interval_s = j.value("sample_interval_s", s.sample_interval_s);
        s.total_duration_s = j.value("total_duration_s", s.total_duration_s);
        s.noise_std = j.value("noise_std", s.noise_std);
        s.ar1_phi = j.value("ar1_phi", s.ar1_phi);
        s.start = j.value("start", s.start);
        s.machine_id = j.value("machine_id", s.machine_id);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("synth spec: ") + e.what());
    }
    s.validate();
    return s;
}

struct SyntheticData {
    SensorFrame frame;                 ///< sensor channels plus a `machine_id` text column
    std::vector<std::string> activity; ///< planted mode per row
    std::vector<std::size_t> mode;     ///< planted mode index per row
};

/// Box-Muller on SplitRng draws, so output does not depend on the standard library's
/// distribution implementations.
inline double standard_normal(SplitRng& rng) {
    double u1 = rng.uniform();
    while (u1 <= 0.0) u1 = rng.uniform();
    const double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Row count is floor(total_duration / sample_interval). The final dwell is cut short when the
/// duration runs out.
inline SyntheticData generate(const DutyCycleSpec& spec) {
    spec.validate();
    SplitRng rng(spec.seed);
    const auto n = static_cast<std::size_t>(std::floor(spec.total_duration_s / spec.sample_interval_s + 1e-9));
    const std::size_t d = spec.channels.size();
    const auto start = *timefmt::parse_iso(spec.start);
    const auto step_ms = spec.sample_interval_s * 1000.0;

    SyntheticData out;
    out.frame.timestamps.reserve(n);
    for (std::size_t c = 0; c < d; ++c) out.frame.channels.push_back({spec.channels[c], ChannelKind::Numeric, ChannelRole::Sensor, {}, {}});
    std::vector<std::size_t> cycle;
    for (const auto& name : spec.cycle_order) cycle.push_back(spec.mode_index(name));

    std::size_t cycle_pos = 0;
    std::vector<double> state(d, 0.0);
    while (out.mode.size() < n) {
        std::size_t mode;
        const double u = rng.uniform();
        if (u < spec.stop_insert_prob) {
            mode = spec.mode_index(spec.stop_mode);
        } else if (u < spec.stop_insert_prob + spec.idle_insert_prob) {
            mode = spec.mode_index(spec.idle_mode);
        } else {
            mode = cycle[cycle_pos];
            cycle_pos = (cycle_pos + 1) % cycle.size();
        }
        const auto& m = spec.modes[mode];
        const double dwell = m.dwell_min_s + rng.uniform() * (m.dwell_max_s - m.dwell_min_s);
        const auto samples = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(dwell / spec.sample_interval_s)));
        for (std::size_t s = 0; s < samples && out.mode.size() < n; ++s) {
            const std::size_t r = out.mode.size();
            out.frame.timestamps.push_back(start + Duration(static_cast<long long>(std::llround(static_cast<double>(r) * step_ms))));
            for (std::size_t c = 0; c < d; ++c) {
                const double z = standard_normal(rng);
                double e = z;
                if (spec.ar1_phi > 0) {
                    e = s == 0 ? z : spec.ar1_phi * state[c] + std::sqrt(1 - spec.ar1_phi * spec.ar1_phi) * z;
                    state[c] = e;
                }
                out.frame.channels[c].values.push_back(m.mean[c] + spec.noise_std * m.std[c] * e);
            }
            out.mode.push_back(mode);
            out.activity.push_back(m.name);
        }
    }
    Channel id{"machine_id", ChannelKind::Text, ChannelRole::Metadata, {}, std::vector<std::string>(n, spec.machine_id)};
    out.frame.channels.push_back(std::move(id));
    return out;
}

/// `row_id,timestamp,activity`
inline std::string write_truth_csv(const SyntheticData& data) {
    std::string out = "row_id,timestamp,activity\n";
    for (std::size_t r = 0; r < data.activity.size(); ++r)
        out += text::join_record({std::to_string(r), format_iso_millis(data.frame.timestamps[r]), data.activity[r]}) + "\n";
    return out;
}

/// Mock labeler prototypes derived from the spec's modes.
inline std::vector<MockPrototype> mock_prototypes(const DutyCycleSpec& spec) {
    std::vector<MockPrototype> out;
    for (const auto& m : spec.modes) {
        MockPrototype p{m.name, {}, m.variants};
        for (std::size_t c = 0; c < spec.channels.size(); ++c) p.channel_means[spec.channels[c]] = m.mean[c];
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace iotminer
