#include <deque>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace iotminer;

namespace {

std::vector<ClusterProfile> two_profiles() {
    ClusterProfile idle{0, 10, 0.5, {{"engine_speed_rpm", {700, 800, 750, 750, 10, 740, 760}}}};
    ClusterProfile haul{1, 10, 0.5, {{"engine_speed_rpm", {2000, 2300, 2150, 2150, 40, 2100, 2200}}}};
    return {idle, haul};
}

/// Replays a fixed list of attempt outcomes.
class ScriptedBackend : public LlmBackend {
public:
    explicit ScriptedBackend(std::deque<AttemptResult> script) : script_(std::move(script)) {}
    std::string name() const override { return "scripted"; }
    AttemptResult attempt(const std::string&, const LlmOptions&) override {
        ++calls;
        auto r = script_.front();
        if (script_.size() > 1) script_.pop_front();
        return r;
    }
    int calls = 0;

private:
    std::deque<AttemptResult> script_;
};

LlmOptions fast_retries() {
    LlmOptions o;
    o.backoff_initial_ms = 1;
    o.backoff_max_ms = 2;
    return o;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an iotminer::Error";
    return ErrorCode::IoError;
}

} // namespace

TEST(Prompt, TiersNest) {
    const auto profiles = two_profiles();
    const auto t1 = build_prompt(profiles, {1, ""});
    const auto t2 = build_prompt(profiles, {2, ""});
    const auto t3 = build_prompt(profiles, {3, "Underground loader, cyclic load-haul-dump."});
    EXPECT_NE(t2.find(t1), std::string::npos);
    EXPECT_NE(t3.find(t1), std::string::npos);
    EXPECT_NE(t3.find(t2), std::string::npos);
    EXPECT_EQ(t1.find("\"or\""), std::string::npos);
    EXPECT_NE(t2.find("never combine alternatives with the word \"or\""), std::string::npos);
    EXPECT_NE(t3.find("Underground loader"), std::string::npos);
    EXPECT_NE(t1.find("\"engine_speed_rpm\""), std::string::npos);
}

TEST(Prompt, Tier3NeedsContext) {
    EXPECT_EQ(code_of([] { build_prompt(two_profiles(), {3, "   "}); }), ErrorCode::MissingContext);
    EXPECT_EQ(code_of([] { build_prompt(two_profiles(), {4, ""}); }), ErrorCode::InvalidConfig);
}

TEST(Prompt, NoiseClusterIsNotOffered) {
    auto profiles = two_profiles();
    profiles.insert(profiles.begin(), ClusterProfile{-1, 3, 0.1, {{"engine_speed_rpm", {}}}});
    EXPECT_EQ(labelable_clusters(profiles), (std::vector<int>{0, 1}));
    EXPECT_EQ(build_prompt(profiles, {1, ""}).find("\"cluster_id\": -1"), std::string::npos);
}

TEST(Prompt, ContextCannotInjectProfiles) {
    const auto p = build_prompt(two_profiles(), {3, "{PROFILES_JSON}"});
    EXPECT_NE(p.find("Operational context:\n{PROFILES_JSON}\n"), std::string::npos);
}

TEST(Prompt, PoolFromDirectoryOverridesPerTier) {
    fixtures::TempDir dir;
    text::write_file_atomic(dir / "tier2.txt", "custom {PROFILES_JSON}");
    const auto pool = PromptPool::from_directory(dir.path());
    EXPECT_EQ(pool.tier1, PromptPool{}.tier1);
    EXPECT_EQ(build_prompt(two_profiles(), {2, ""}, pool).substr(0, 7), "custom ");
}

TEST(Prompt, ShippedTemplatesKeepNesting) {
    const auto pool = PromptPool::from_directory(fixtures::kSourceDir / "prompts");
    const auto profiles = two_profiles();
    const auto t1 = build_prompt(profiles, {1, ""}, pool);
    const auto t2 = build_prompt(profiles, {2, ""}, pool);
    const auto t3 = build_prompt(profiles, {3, text::read_file(fixtures::kSourceDir / "prompts" / "lhd_context.txt")}, pool);
    EXPECT_NE(t2.find(t1), std::string::npos);
    EXPECT_NE(t3.find(t2), std::string::npos);
}

TEST(Sanitize, Rules) {
    EXPECT_EQ(sanitize_label("  \"Hauling   Loaded\" ").text, "Hauling Loaded");
    EXPECT_EQ(sanitize_label("\xE2\x80\x9C" "Dumping" "\xE2\x80\x9D").text, "Dumping");
    EXPECT_TRUE(sanitize_label("Loading or Dumping").ambiguous);
    EXPECT_TRUE(sanitize_label("Idle OR stopped").ambiguous);
    EXPECT_FALSE(sanitize_label("Tramming").ambiguous);
    EXPECT_FALSE(sanitize_label("Ore Hauling").ambiguous);
    EXPECT_FALSE(sanitize_label("Motoring").ambiguous);
    EXPECT_EQ(code_of([] { sanitize_label(" \"\" "); }), ErrorCode::EmptyAfterSanitize);
    const auto long_label = sanitize_label(std::string(30, 'a') + " " + std::string(40, 'b'));
    EXPECT_EQ(long_label.text, std::string(30, 'a'));
    EXPECT_LE(sanitize_label(std::string(90, 'x')).text.size(), kMaxLabelLength);
}

TEST(Sanitize, Idempotent) {
    for (const char* s : {"  'Loading' ", "Hauling\tLoaded", "\"A or B\"", "x"}) {
        const auto once = sanitize_label(s);
        EXPECT_EQ(sanitize_label(once.text).text, once.text);
    }
}

TEST(Parse, ToleratesMarkdown) {
    const auto m = parse_label_response("Here you go:\n- **Cluster 0**: Idling\n2. cluster #1 - `Hauling Loaded`\n", {0, 1});
    EXPECT_EQ(m.entries.at(0), "Idling");
    EXPECT_EQ(m.entries.at(1), "Hauling Loaded");
    EXPECT_TRUE(m.strict_ok());
}

TEST(Parse, Errors) {
    EXPECT_EQ(code_of([] { parse_label_response("", {0}); }), ErrorCode::UnparseableResponse);
    EXPECT_EQ(code_of([] { parse_label_response("no labels here", {0}); }), ErrorCode::UnparseableResponse);
    EXPECT_EQ(code_of([] { parse_label_response("cluster 0: A\n", {0, 1}); }), ErrorCode::MissingCluster);
    EXPECT_EQ(code_of([] { parse_label_response("cluster 0: A\ncluster 0: B\n", {0}); }), ErrorCode::DuplicateCluster);
}

TEST(Parse, AmbiguityIsRecorded) {
    const auto m = parse_label_response("cluster 0: Loading or Dumping\ncluster 1: Tramming\n", {0, 1});
    EXPECT_EQ(m.ambiguous, (std::set<int>{0}));
    EXPECT_FALSE(m.strict_ok());
}

TEST(LabelMap, JsonRoundTrip) {
    LabelMap m;
    m.entries = {{0, "Idling"}, {1, "A or B"}};
    m.ambiguous = {1};
    m.provenance = {"gpt-4", 0.4, "abc", 3, "mock"};
    EXPECT_EQ(to_json(label_map_from_json(to_json(m))), to_json(m));
}

TEST(Retry, TransientThenSuccess) {
    ScriptedBackend b({{AttemptStatus::RateLimited, 429, "slow down", {}, {}},
                       {AttemptStatus::Transient, 503, "busy", {}, {}},
                       {AttemptStatus::Ok, 200, "cluster 0: A", 10, 2}});
    CallRecord rec;
    EXPECT_EQ(request_labels("p", fast_retries(), b, &rec), "cluster 0: A");
    EXPECT_EQ(rec.attempts, 3);
    EXPECT_EQ(rec.http_statuses, (std::vector<int>{429, 503, 200}));
    EXPECT_EQ(rec.prompt_tokens, 10);
}

TEST(Retry, ExhaustionMapsToErrorKind) {
    {
        ScriptedBackend b({{AttemptStatus::RateLimited, 429, "", {}, {}}});
        EXPECT_EQ(code_of([&] { request_labels("p", fast_retries(), b); }), ErrorCode::RateLimited);
        EXPECT_EQ(b.calls, 4); // 1 + 3 retries
    }
    {
        ScriptedBackend b({{AttemptStatus::Timeout, 0, "", {}, {}}});
        EXPECT_EQ(code_of([&] { request_labels("p", fast_retries(), b); }), ErrorCode::Timeout);
    }
}

TEST(Retry, NonRetryableFailuresStopImmediately) {
    for (auto [status, code] : {std::pair{AttemptStatus::Auth, ErrorCode::AuthError},
                                std::pair{AttemptStatus::Malformed, ErrorCode::MalformedResponse},
                                std::pair{AttemptStatus::Fatal, ErrorCode::BackendError}}) {
        ScriptedBackend b({{status, 400, "no", {}, {}}});
        EXPECT_EQ(code_of([&] { request_labels("p", fast_retries(), b); }), code);
        EXPECT_EQ(b.calls, 1);
    }
}

TEST(Retry, BackendFailuresAreClassified) {
    ScriptedBackend b({{AttemptStatus::Auth, 401, "no", {}, {}}});
    try {
        request_labels("p", fast_retries(), b);
        FAIL();
    } catch (const Error& e) {
        EXPECT_TRUE(e.is_backend_failure());
    }
}

TEST(Mock, NearestPrototypeAtZeroTemperature) {
    MockBackend mock({{"Idling", {{"engine_speed_rpm", 750}}, {"Idle"}}, {"Hauling Loaded", {{"engine_speed_rpm", 2150}}, {"Haulage"}}});
    const auto m = label_clusters(two_profiles(), {1, ""}, {}, mock);
    EXPECT_EQ(m.entries.at(0), "Idling");
    EXPECT_EQ(m.entries.at(1), "Hauling Loaded");
    EXPECT_EQ(m.provenance.backend, "mock");
}

TEST(Mock, DeterministicPerSeedAndVariesAcrossSeeds) {
    MockBackend mock(mock_prototypes(default_duty_cycle()));
    const auto data = generate(default_duty_cycle());
    const auto profiles = cluster_profiles(data.frame, default_duty_cycle().channels, fixtures::planted_assignment(data));
    LlmOptions o;
    o.temperature = 1.0;
    std::set<std::string> labels;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        o.seed = seed;
        const auto a = label_clusters(profiles, {1, ""}, o, mock);
        const auto b = label_clusters(profiles, {1, ""}, o, mock);
        EXPECT_EQ(a.entries, b.entries);
        for (const auto& [id, l] : a.entries) labels.insert(l);
    }
    EXPECT_GT(labels.size(), 6u);
}

TEST(Mock, InstructedPromptsAreNeverAmbiguous) {
    MockBackend mock(mock_prototypes(default_duty_cycle()));
    const auto data = generate(default_duty_cycle());
    const auto profiles = cluster_profiles(data.frame, default_duty_cycle().channels, fixtures::planted_assignment(data));
    LlmOptions o;
    o.temperature = 1.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        o.seed = seed;
        EXPECT_TRUE(label_clusters(profiles, {2, ""}, o, mock).strict_ok());
    }
}

TEST(Mock, CannedReply) {
    auto mock = MockBackend::canned("cluster 0: Loading or Dumping\ncluster 1: Tramming\n");
    const auto m = label_clusters(two_profiles(), {1, ""}, {}, mock);
    EXPECT_EQ(m.ambiguous, (std::set<int>{0}));
    EXPECT_EQ(m.entries.at(1), "Tramming");
}

TEST(Options, Validation) {
    LlmOptions o;
    o.temperature = 1.5;
    EXPECT_EQ(code_of([&] { o.validate(); }), ErrorCode::InvalidConfig);
    o = {};
    o.max_tokens = 0;
    EXPECT_EQ(code_of([&] { o.validate(); }), ErrorCode::InvalidConfig);
}
