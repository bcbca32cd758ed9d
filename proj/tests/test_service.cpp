#include <atomic>
#include <thread>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "iotminer/backends.hpp"
#include "iotminer/service.hpp"

using namespace iotminer;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// httplib server on an ephemeral loopback port, stopped on destruction.
class LocalServer {
public:
    explicit LocalServer(const std::function<void(httplib::Server&)>& setup) {
        setup(server_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }
    int port() const { return port_; }
    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }
    httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

/// A 20 minute synthetic run with three recording gaps (31 s, 91 s and 301 s), so the
/// time-gap threshold controls how many candidate cases exist.
class ServiceTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        base_ = new fixtures::TempDir("iotminer_service");
        auto spec = default_duty_cycle();
        spec.total_duration_s = 1200;
        const auto data = generate(spec);
        std::vector<std::size_t> keep;
        for (std::size_t r = 0; r < data.frame.rows(); ++r)
            if (!(r >= 300 && r < 330) && !(r >= 500 && r < 590) && !(r >= 700 && r < 1000)) keep.push_back(r);
        text::write_file_atomic(*base_ / "input.csv", write_frame_csv(data.frame.select_rows(keep)));
        text::write_file_atomic(*base_ / "truth.csv", write_truth_csv(data));
        auto c = fixtures::small_synth_config(*base_ / "run");
        c.ingestion.synthesize = false;
        c.ingestion.input = (*base_ / "input.csv").string();
        c.evaluation.truth = (*base_ / "truth.csv").string();
        c.segmentation.gap_threshold = Duration{10'000};
        run_pipeline(c);
    }
    static void TearDownTestSuite() {
        delete base_;
        base_ = nullptr;
    }

    void SetUp() override {
        fs::copy(*base_ / "run", dir_.path() / "run", fs::copy_options::recursive);
        service_ = std::make_unique<PipelineService>(dir_.path() / "run");
        server_ = std::make_unique<LocalServer>([this](httplib::Server& s) { service_->register_routes(s); });
    }

    json get(const std::string& path, int expect = 200) {
        auto res = server_->client().Get(path);
        EXPECT_TRUE(res) << path;
        if (!res) return {};
        EXPECT_EQ(res->status, expect) << path << ": " << res->body;
        return json::parse(res->body);
    }

    std::pair<int, json> post(const std::string& path, const std::string& body) {
        auto res = server_->client().Post(path, body, "application/json");
        EXPECT_TRUE(res) << path;
        if (!res) return {0, {}};
        return {res->status, json::parse(res->body)};
    }

    int version() { return get("/api/state")["version"].get<int>(); }

    json segment(const std::string& gap) {
        auto [status, body] = post("/api/segmentation", json{{"version", version()},
                                                             {"config", {{"method", "time-gap"}, {"gap_threshold", gap}}}}
                                                            .dump());
        EXPECT_EQ(status, 200) << body.dump();
        return body;
    }

    static fixtures::TempDir* base_;
    fixtures::TempDir dir_{"iotminer_service_case"};
    std::unique_ptr<PipelineService> service_;
    std::unique_ptr<LocalServer> server_;
};

fixtures::TempDir* ServiceTest::base_ = nullptr;

} // namespace

TEST_F(ServiceTest, StateAndReadEndpoints) {
    const auto state = get("/api/state");
    EXPECT_EQ(state["version"], 1);
    EXPECT_EQ(state["status"], "complete");
    EXPECT_EQ(get("/api/clustering/results").size(), 3u);
    EXPECT_FALSE(get("/api/profiles").empty());
    EXPECT_FALSE(get("/api/labels")["entries"].empty());
    const auto eval = get("/api/evaluation");
    EXPECT_GT(eval["report"]["swa"].get<double>(), 0.9);
    EXPECT_TRUE(eval.contains("alignment"));
    get("/api/sweep", 404);
}

TEST_F(ServiceTest, ProjectionForWinnerAndOtherConfigs) {
    const auto winner = get("/api/projection");
    EXPECT_EQ(winner["dims"], 2);
    const auto rows = winner["points"].size();
    EXPECT_GT(rows, 700u);
    EXPECT_TRUE(winner["points"][0].contains("cluster_id"));
    const auto other = get("/api/projection?config=2");
    EXPECT_EQ(other["points"].size(), rows);
    get("/api/projection?config=99", 422);
}

TEST_F(ServiceTest, PreviewHonoursCaseLimit) {
    const auto p = get("/api/eventlog/preview?cases=1");
    EXPECT_EQ(p["cases"].size(), 1u);
    EXPECT_EQ(p["case_count"], 4);
    get("/api/eventlog/preview?cases=-2", 422);
}

TEST_F(ServiceTest, LabelEditChangesPreview) {
    const auto before = get("/api/eventlog/preview?cases=100");
    const auto swa_before = get("/api/evaluation")["report"]["swa"].get<double>();
    EXPECT_EQ(before.dump().find("Renamed Activity"), std::string::npos);

    const auto labels = get("/api/labels");
    const std::string id = std::to_string(labels["entries"][0]["cluster_id"].get<int>());
    auto [status, body] = post("/api/labels", json{{"version", 1}, {"labels", {{id, "  \"Renamed Activity\" "}}}}.dump());
    ASSERT_EQ(status, 200) << body.dump();
    EXPECT_EQ(body["version"], 2);
    EXPECT_EQ(body["labels"]["entries"][0]["label"], "Renamed Activity");

    const auto after = get("/api/eventlog/preview?cases=100");
    EXPECT_NE(after.dump().find("Renamed Activity"), std::string::npos);
    EXPECT_LT(get("/api/evaluation")["report"]["swa"].get<double>(), swa_before);
    const auto state = get("/api/state");
    EXPECT_EQ(state["version"], 2);
    EXPECT_EQ(state["mutations"], 1);
    const auto manifest = json::parse(text::read_file(dir_.path() / "run" / "manifest.json"));
    EXPECT_EQ(manifest["mutations"][0]["kind"], "labels");
    EXPECT_EQ(manifest["mutations"][0]["changes"][id]["to"], "Renamed Activity");
}

TEST_F(ServiceTest, LabelEditValidation) {
    auto [s1, b1] = post("/api/labels", json{{"version", 1}, {"labels", {{"99", "X"}, {"0", " \"\" "}}}}.dump());
    EXPECT_EQ(s1, 422);
    EXPECT_EQ(b1["errors"].size(), 2u);

    auto [s2, b2] = post("/api/labels", json{{"version", 7}, {"labels", {{"0", "X"}}}}.dump());
    EXPECT_EQ(s2, 409);
    EXPECT_EQ(b2["current_version"], 1);

    auto [s3, b3] = post("/api/labels", "[1, 2]");
    EXPECT_EQ(s3, 400);
    auto [s4, b4] = post("/api/labels", json{{"labels", {{"0", "X"}}}}.dump());
    EXPECT_EQ(s4, 422);
    EXPECT_EQ(version(), 1); // nothing was committed
}

TEST_F(ServiceTest, SegmentationPreviewIsMonotoneInGap) {
    std::vector<std::size_t> candidates;
    for (const char* gap : {"5s", "60s", "120s", "10m", "1h"}) {
        const auto body = segment(gap);
        const auto& p = body["preview"];
        candidates.push_back(p["case_count"].get<std::size_t>() + p["dropped"].size());
    }
    EXPECT_EQ(candidates, (std::vector<std::size_t>{4, 3, 2, 1, 1}));
    EXPECT_EQ(version(), 6);
    EXPECT_EQ(json::parse(text::read_file(dir_.path() / "run" / "config.json"))["segmentation"]["gap_threshold"], "1h");
}

TEST_F(ServiceTest, SegmentationValidation) {
    auto [s1, b1] = post("/api/segmentation",
                         json{{"version", 1}, {"config", {{"method", "sensor-change"}, {"change_channel", "nope"}}}}.dump());
    EXPECT_EQ(s1, 422);
    EXPECT_EQ(b1["errors"][0]["field"], "change_channel");
    auto [s2, b2] = post("/api/segmentation", json{{"version", 1}, {"config", {{"gap_threshold", "-5m"}}}}.dump());
    EXPECT_EQ(s2, 422);
    EXPECT_EQ(b2["errors"][0]["field"], "gap_threshold");
}

TEST_F(ServiceTest, ConcurrentEditsConflict) {
    const std::string body = json{{"version", 1}, {"config", {{"gap_threshold", "60s"}}}}.dump();
    std::atomic<int> ok{0}, conflict{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < 3; ++i)
        threads.emplace_back([&] {
            auto res = server_->client().Post("/api/segmentation", body, "application/json");
            if (res && res->status == 200) ++ok;
            if (res && res->status == 409) ++conflict;
        });
    for (auto& t : threads) t.join();
    EXPECT_EQ(ok, 1);
    EXPECT_EQ(conflict, 2);
}

TEST(ServiceSetup, NeedsManifest) {
    fixtures::TempDir dir;
    EXPECT_THROW(PipelineService{dir.path()}, Error);
}

// ---------------------------------------------------------------------------
// HTTP clients against local fakes

TEST(HttpLlm, RetriesRateLimitsThenSucceeds) {
    std::atomic<int> hits{0};
    std::string seen_auth, seen_body;
    LocalServer fake([&](httplib::Server& s) {
        s.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
            seen_auth = req.get_header_value("Authorization");
            seen_body = req.body;
            if (hits++ < 2) {
                res.status = 429;
                return;
            }
            res.set_content(json{{"choices", {{{"message", {{"content", "cluster 0: Idling"}}}}}},
                                 {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 4}}}}
                                .dump(),
                            "application/json");
        });
    });
    ::setenv("IOTMINER_TEST_TOKEN", "secret", 1);
    LlmOptions o;
    o.endpoint = fake.url("/v1/chat/completions");
    o.credential_env = "IOTMINER_TEST_TOKEN";
    o.backoff_initial_ms = 1;
    o.backoff_max_ms = 2;
    o.temperature = 0.4;
    HttpLlmBackend backend;
    CallRecord rec;
    EXPECT_EQ(request_labels("hello", o, backend, &rec), "cluster 0: Idling");
    EXPECT_EQ(rec.attempts, 3);
    EXPECT_EQ(rec.http_statuses, (std::vector<int>{429, 429, 200}));
    EXPECT_EQ(rec.completion_tokens, 4);
    EXPECT_EQ(seen_auth, "Bearer secret");
    const auto sent = json::parse(seen_body);
    EXPECT_EQ(sent["messages"][0]["content"], "hello");
    EXPECT_EQ(sent["temperature"], 0.4);
}

TEST(HttpLlm, StatusMapping) {
    std::atomic<int> status{200};
    std::string body;
    LocalServer fake([&](httplib::Server& s) {
        s.Post("/chat", [&](const httplib::Request&, httplib::Response& res) {
            res.status = status;
            res.set_content(body, "application/json");
        });
    });
    LlmOptions o;
    o.endpoint = fake.url("/chat");
    HttpLlmBackend backend;
    const std::vector<std::tuple<int, std::string, AttemptStatus>> cases{
        {401, "", AttemptStatus::Auth},         {403, "", AttemptStatus::Auth},
        {429, "", AttemptStatus::RateLimited},  {504, "", AttemptStatus::Timeout},
        {503, "", AttemptStatus::Transient},    {404, "", AttemptStatus::Fatal},
        {200, "not json", AttemptStatus::Malformed}, {200, R"({"choices": []})", AttemptStatus::Malformed}};
    for (const auto& [code, text, expect] : cases) {
        status = code;
        body = text;
        EXPECT_EQ(backend.attempt("p", o).status, expect) << code << " " << text;
    }
}

TEST(HttpLlm, UnreachableEndpointIsTransient) {
    int port;
    {
        LocalServer closed([](httplib::Server&) {});
        port = closed.port();
    }
    LlmOptions o;
    o.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    o.timeout_seconds = 2;
    const auto r = HttpLlmBackend{}.attempt("p", o);
    EXPECT_TRUE(r.status == AttemptStatus::Transient || r.status == AttemptStatus::Timeout);
}

TEST(Embedding, CosineFromFakeEndpoint) {
    std::atomic<int> requests{0};
    LocalServer fake([&](httplib::Server& s) {
        s.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
            ++requests;
            const auto label = json::parse(req.body)["input"][0].get<std::string>();
            std::vector<double> v{0, 0};
            if (label == "Idle") v = {1, 0};
            if (label == "Haul") v = {0, 1};
            if (label == "Idling") v = {1, 1};
            if (label == "Reverse") v = {-1, 0};
            res.set_content(json{{"data", {{{"embedding", v}}}}}.dump(), "application/json");
        });
    });
    EmbeddingOptions o;
    o.endpoint = fake.url("/v1/embeddings");
    EmbeddingSimilarity sim(o);
    EXPECT_NEAR(sim.similarity("Idle", "Idling"), std::sqrt(0.5), 1e-12);
    EXPECT_EQ(sim.similarity("Idle", "Haul"), 0.0);
    EXPECT_EQ(sim.similarity("Idle", "Reverse"), 0.0); // negative cosine clamps
    EXPECT_EQ(sim.similarity("Idling", "Idle"), sim.similarity("Idle", "Idling"));
    EXPECT_EQ(requests, 4); // one embedding per distinct label
}

TEST(Embedding, FailuresAreProviderUnavailable) {
    LocalServer fake([](httplib::Server& s) {
        s.Post("/v1/embeddings", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    });
    EmbeddingOptions o;
    o.endpoint = fake.url("/v1/embeddings");
    EmbeddingSimilarity sim(o);
    try {
        sim.similarity("a", "b");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ProviderUnavailable);
    }
}
