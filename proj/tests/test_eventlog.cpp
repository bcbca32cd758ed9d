#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace iotminer;
using fixtures::at;

namespace {

Timeline timeline_of(const std::vector<std::pair<std::string, std::string>>& rows) {
    Timeline t;
    for (std::size_t i = 0; i < rows.size(); ++i) t.push_back({at(rows[i].first), rows[i].second, i, 0, std::nan("")});
    return t;
}

/// One row per second starting at `start`, activities taken from `acts`.
Timeline per_second(const std::string& start, const std::vector<std::string>& acts) {
    Timeline t;
    for (std::size_t i = 0; i < acts.size(); ++i)
        t.push_back({at(start) + Duration{static_cast<long long>(i) * 1000}, acts[i], i, 0, std::nan("")});
    return t;
}

std::vector<std::string> activities(const Case& c) {
    std::vector<std::string> out;
    for (const auto& e : c.events) out.push_back(e.activity);
    return out;
}

EventLog golden_log() {
    EventLog log;
    log.attributes = {{"source", "fixture & \"golden\""}};
    const auto t0 = at("2024-10-01T06:00:00Z");
    log.cases.push_back({"case_0001",
                         {{"Loading", t0, t0 + Duration{39'000}, RowRange{0, 39}},
                          {"Hauling Loaded", t0 + Duration{40'000}, t0 + Duration{129'000}, RowRange{40, 129}}}});
    return log;
}

} // namespace

TEST(Segmentation, TimeGapSplitsOnlyAboveThreshold) {
    const auto t = timeline_of({{"2024-10-01T06:00:00Z", "A"},
                                {"2024-10-01T06:00:01Z", "B"},
                                {"2024-10-01T06:10:01Z", "A"}, // exactly 10 min: same case
                                {"2024-10-01T06:20:02Z", "B"},
                                {"2024-10-01T06:20:03Z", "C"}});
    SegmentationConfig cfg;
    cfg.gap_threshold = Duration{600'000};
    const auto seg = segment_cases(t, cfg);
    ASSERT_EQ(seg.cases.size(), 2u);
    EXPECT_EQ(activities(seg.cases[0]), (std::vector<std::string>{"A", "B", "A"}));
    EXPECT_EQ(activities(seg.cases[1]), (std::vector<std::string>{"B", "C"}));
    EXPECT_EQ(seg.cases[1].case_id, "case_0002");
    EXPECT_EQ(seg.gap_threshold, Duration{600'000});
}

TEST(Segmentation, DefaultGapIsTenMedianSteps) {
    const auto t = timeline_of({{"2024-10-01T06:00:00Z", "A"},
                                {"2024-10-01T06:00:02Z", "B"},
                                {"2024-10-01T06:00:04Z", "A"},
                                {"2024-10-01T06:00:25Z", "B"}, // 21 s > 20 s
                                {"2024-10-01T06:00:27Z", "C"}});
    const auto seg = segment_cases(t, {});
    EXPECT_EQ(seg.gap_threshold, Duration{20'000});
    EXPECT_EQ(seg.cases.size(), 2u);
}

TEST(Segmentation, DayBoundaryUsesLocalOffset) {
    const auto t = timeline_of({{"2024-10-01T21:00:00Z", "A"},
                                {"2024-10-01T21:30:00Z", "B"},
                                {"2024-10-01T22:30:00Z", "A"},
                                {"2024-10-01T23:30:00Z", "B"}});
    SegmentationConfig cfg;
    cfg.method = SegmentationMethod::DayBoundary;
    EXPECT_EQ(segment_cases(t, cfg).cases.size(), 1u);
    cfg.utc_offset_minutes = 120; // local midnight falls at 22:00Z
    const auto seg = segment_cases(t, cfg);
    ASSERT_EQ(seg.cases.size(), 2u);
    EXPECT_EQ(activities(seg.cases[0]), (std::vector<std::string>{"A", "B"}));
    EXPECT_EQ(activities(seg.cases[1]), (std::vector<std::string>{"A", "B"}));
}

TEST(Segmentation, SensorChangeSplitsOnJumps) {
    auto t = per_second("2024-10-01T06:00:00Z", {"A", "B", "A", "B", "A", "B"});
    const std::vector<double> v{10, 10.5, 11, 30, 30.2, 30.1};
    for (std::size_t i = 0; i < t.size(); ++i) t[i].value = v[i];
    SegmentationConfig cfg;
    cfg.method = SegmentationMethod::SensorChange;
    cfg.change_channel = "payload_t";
    cfg.sensitivity = 5;
    const auto seg = segment_cases(t, cfg);
    ASSERT_EQ(seg.cases.size(), 2u);
    EXPECT_EQ(seg.cases[0].events.size(), 3u);
    EXPECT_EQ(seg.cases[1].events.front().source_rows, (RowRange{3, 3}));
}

TEST(Segmentation, ShortCasesAreDroppedAndReported) {
    const auto t = timeline_of({{"2024-10-01T06:00:00Z", "A"},
                                {"2024-10-01T06:00:01Z", "A"},
                                {"2024-10-01T07:00:00Z", "A"},
                                {"2024-10-01T07:00:01Z", "B"}});
    SegmentationConfig cfg;
    cfg.gap_threshold = Duration{60'000};
    const auto seg = segment_cases(t, cfg);
    ASSERT_EQ(seg.cases.size(), 1u);
    EXPECT_EQ(seg.cases[0].case_id, "case_0002"); // ordinal gap left by the drop
    ASSERT_EQ(seg.dropped.size(), 1u);
    EXPECT_EQ(seg.dropped[0], (DropRecord{1, "min_activities", {0, 1}}));
    const auto report = drop_report_json(seg.dropped);
    EXPECT_EQ(report[0]["row_range"], nlohmann::json::array({0, 1}));
}

TEST(Segmentation, MaxDurationStartsNewCase) {
    std::vector<std::string> acts;
    for (int i = 0; i < 10; ++i) acts.push_back(i % 2 ? "B" : "A");
    SegmentationConfig cfg;
    cfg.max_case_duration = Duration{3'000};
    const auto seg = segment_cases(per_second("2024-10-01T06:00:00Z", acts), cfg);
    // cases start at 0, 4, 8 s; the last holds rows 8..9
    ASSERT_EQ(seg.cases.size(), 3u);
    EXPECT_EQ(seg.cases[0].events.size(), 4u);
    EXPECT_EQ(seg.cases[2].events.size(), 2u);
    for (const auto& c : seg.cases) EXPECT_LE(c.events.back().end - c.events.front().start, Duration{3'000});
}

TEST(Segmentation, MergeMatchesRunLengthEncoding) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        std::uniform_int_distribution<int> len(1, 60), sym(0, 1 + trial % 4);
        std::vector<std::string> acts(static_cast<std::size_t>(len(rng)));
        for (auto& a : acts) a = std::string(1, static_cast<char>('A' + sym(rng)));
        SegmentationConfig cfg;
        cfg.gap_threshold = Duration{3'600'000};
        cfg.min_activities_per_case = 1;
        const auto seg = segment_cases(per_second("2024-10-01T06:00:00Z", acts), cfg);
        ASSERT_EQ(seg.cases.size(), 1u);
        const auto runs = oracle::rle(acts);
        const auto& ev = seg.cases[0].events;
        ASSERT_EQ(ev.size(), runs.size());
        for (std::size_t i = 0; i < runs.size(); ++i) {
            EXPECT_EQ(ev[i].activity, runs[i].value);
            EXPECT_EQ(ev[i].source_rows, (RowRange{runs[i].first, runs[i].last}));
            EXPECT_EQ(ev[i].start, at("2024-10-01T06:00:00Z") + Duration{static_cast<long long>(runs[i].first) * 1000});
            EXPECT_EQ(ev[i].end, at("2024-10-01T06:00:00Z") + Duration{static_cast<long long>(runs[i].last) * 1000});
        }
    }
}

TEST(Segmentation, NoMergeKeepsOneEventPerRow) {
    SegmentationConfig cfg;
    cfg.merge_consecutive = false;
    const auto seg = segment_cases(per_second("2024-10-01T06:00:00Z", {"A", "A", "B"}), cfg);
    EXPECT_EQ(seg.cases.at(0).events.size(), 3u);
}

TEST(Segmentation, Errors) {
    EXPECT_THROW(segment_cases({}, {}), Error);
    auto t = per_second("2024-10-01T06:00:00Z", {"A", "B"});
    std::swap(t[0], t[1]);
    EXPECT_THROW(segment_cases(t, {}), Error);
    SegmentationConfig cfg;
    cfg.method = SegmentationMethod::SensorChange;
    EXPECT_THROW(segment_cases(per_second("2024-10-01T06:00:00Z", {"A", "B"}), cfg), Error);
}

TEST(SegmentationConfig, JsonFieldErrors) {
    std::vector<FieldError> errs;
    segmentation_config_from_json({{"method", "weekly"}, {"gap_threshold", "-3m"}, {"min_activities_per_case", 0}}, &errs);
    std::set<std::string> fields;
    for (const auto& e : errs) fields.insert(e.field);
    EXPECT_EQ(fields, (std::set<std::string>{"method", "gap_threshold", "min_activities_per_case"}));

    errs.clear();
    const auto c = segmentation_config_from_json({{"method", "day"}, {"max_case_duration", 3600}, {"utc_offset_minutes", -300}}, &errs);
    EXPECT_TRUE(errs.empty());
    EXPECT_EQ(c.max_case_duration, Duration{3'600'000});
    EXPECT_EQ(to_json(segmentation_config_from_json(to_json(c), nullptr)), to_json(c));
}

TEST(Xes, GoldenBytes) {
    EXPECT_EQ(to_xes(golden_log()), text::read_file(fixtures::kDataDir / "golden_1case_2events.xes"));
}

TEST(Xes, LibraryReaderRoundTrip) {
    const auto log = golden_log();
    EXPECT_EQ(read_xes(to_xes(log)), log);
}

TEST(Xes, IndependentReaderSeesSameContent) {
    std::mt19937_64 rng(12);
    const std::vector<std::string> names{"Loading", "Hauling <loaded>", "Dump & go", "\"Idle\"", "Tram'n", "Drill\tline"};
    for (int trial = 0; trial < 100; ++trial) {
        EventLog log;
        log.attributes = {{"run", std::to_string(trial)}};
        std::uniform_int_distribution<int> ncases(1, 4), nev(1, 6), pick(0, static_cast<int>(names.size()) - 1);
        auto t = at("2024-10-01T06:00:00Z") + Duration{trial * 7'001};
        std::size_t row = 0;
        for (int c = 0, nc = ncases(rng); c < nc; ++c) {
            Case cs{"case_" + text::zero_pad(static_cast<std::size_t>(c + 1), 4), {}};
            for (int e = 0, ne = nev(rng); e < ne; ++e) {
                const auto start = t;
                t += Duration{1'500 + e * 250};
                cs.events.push_back({names[static_cast<std::size_t>(pick(rng))], start, t, RowRange{row, row + 3}});
                row += 4;
            }
            log.cases.push_back(std::move(cs));
        }
        const auto xml = to_xes(log);
        ASSERT_EQ(read_xes(xml), log);
        const auto seen = oracle::read_xes(xml);
        ASSERT_EQ(seen.log_attributes, log.attributes);
        ASSERT_EQ(seen.traces.size(), log.cases.size());
        for (std::size_t c = 0; c < log.cases.size(); ++c) {
            EXPECT_EQ(seen.traces[c].first, log.cases[c].case_id);
            ASSERT_EQ(seen.traces[c].second.size(), log.cases[c].events.size());
            for (std::size_t e = 0; e < log.cases[c].events.size(); ++e) {
                const auto& ev = log.cases[c].events[e];
                const auto& got = seen.traces[c].second[e];
                EXPECT_EQ(got.at("concept:name"), ev.activity);
                EXPECT_EQ(got.at("time:timestamp"), format_iso_millis(ev.start));
                EXPECT_EQ(got.at("end_time"), format_iso_millis(ev.end));
                EXPECT_EQ(got.at("row_first"), std::to_string(ev.source_rows->first));
            }
        }
    }
}

TEST(Xes, MalformedInputIsReported) {
    try {
        read_xes("<log><trace>");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::XesParseError);
    }
}

TEST(EventCsv, RoundTripWithQuoting) {
    auto log = golden_log();
    log.cases[0].events[0].activity = "Load, \"bucket\"";
    for (auto& c : log.cases)
        for (auto& e : c.events) e.source_rows.reset();
    log.attributes.clear();
    const auto csv = to_csv(log);
    EXPECT_NE(csv.find("\"Load, \"\"bucket\"\"\""), std::string::npos);
    EXPECT_EQ(read_eventlog_csv(csv), log);
}

TEST(Timeline, CsvRoundTrip) {
    auto t = per_second("2024-10-01T06:00:00Z", {"A", "B, c", "A"});
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i].cluster = static_cast<int>(i);
        t[i].value = 1.5 * static_cast<double>(i);
    }
    EXPECT_EQ(read_timeline_csv(write_timeline_csv(t, "payload_t"), "payload_t"), t);
}

TEST(Timeline, NoiseRowsAreUnclassified) {
    SensorFrame f;
    for (int i = 0; i < 3; ++i) f.timestamps.push_back(at("2024-10-01T06:00:00Z") + Duration{i * 1000});
    f.channels.push_back({"x", ChannelKind::Numeric, ChannelRole::Sensor, {1, 2, 3}, {}});
    LabelMap labels;
    labels.entries = {{0, "Idling"}};
    const auto t = labeled_timeline(f, ClusterAssignment{{0, kNoiseLabel, 0}, 1}, labels);
    EXPECT_EQ(t[1].activity, kUnclassified);
    EXPECT_EQ(t[2].activity, "Idling");
    labels.entries.clear();
    EXPECT_THROW(labeled_timeline(f, ClusterAssignment{{0, 0, 0}, 1}, labels), Error);
}

TEST(Preview, LimitsCasesAndCountsEvents) {
    auto log = golden_log();
    log.cases.push_back(log.cases[0]);
    log.cases[1].case_id = "case_0002";
    const auto j = eventlog_preview_json(log, {}, 1);
    EXPECT_EQ(j["case_count"], 2);
    EXPECT_EQ(j["event_count"], 4);
    EXPECT_EQ(j["cases"].size(), 1u);
}
