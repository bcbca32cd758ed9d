#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotminer/evaluation.hpp"
#include "iotminer/http_util.hpp"

namespace iotminer {

struct EmbeddingOptions {
    std::string endpoint = "https://api.openai.com/v1/embeddings";
    std::string model = "text-embedding-3-small";
    std::string credential_env = "IOTMINER_API_KEY";
    double timeout_seconds = 30.0;
};

/// Cosine of label embeddings fetched from an OpenAI-compatible `/embeddings` endpoint.
/// Negative cosines clamp to 0. Any transport or format failure raises ProviderUnavailable.
class EmbeddingSimilarity : public SimilarityProvider {
public:
    explicit EmbeddingSimilarity(EmbeddingOptions options) : options_(std::move(options)) {}

    std::string name() const override { return "embedding"; }

    std::vector<double> embed(const std::string& label) {
        {
            std::lock_guard lock(embed_mutex_);
            if (auto it = vectors_.find(label); it != vectors_.end()) return it->second;
        }
        auto v = fetch(label);
        std::lock_guard lock(embed_mutex_);
        return vectors_.emplace(label, std::move(v)).first->second;
    }

protected:
    double compute(const std::string& a, const std::string& b) override {
        const auto va = embed(a);
        const auto vb = embed(b);
        if (va.size() != vb.size()) fail(ErrorCode::ProviderUnavailable, "embedding dimensions differ");
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < va.size(); ++i) {
            dot += va[i] * vb[i];
            na += va[i] * va[i];
            nb += vb[i] * vb[i];
        }
        if (na == 0 || nb == 0) return 0.0;
        return std::max(0.0, dot / std::sqrt(na * nb));
    }

private:
    std::vector<double> fetch(const std::string& label) {
        const auto ep = http::split_url(options_.endpoint);
        auto client = http::make_client(ep, options_.timeout_seconds);
        httplib::Headers headers;
        const auto token = http::credential_from_env(options_.credential_env);
        if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
        const nlohmann::json body{{"model", options_.model}, {"input", nlohmann::json::array({label})}};
        auto res = client->Post(ep.path, headers, body.dump(), "application/json");
        if (!res) fail(ErrorCode::ProviderUnavailable, "embedding request failed: " + httplib::to_string(res.error()));
        if (res->status != 200) fail(ErrorCode::ProviderUnavailable, "embedding endpoint returned " + std::to_string(res->status));
        auto j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("data") || !j["data"].is_array() || j["data"].empty() ||
            !j["data"][0].contains("embedding"))
            fail(ErrorCode::ProviderUnavailable, "embedding response lacks data[0].embedding");
        std::vector<double> v;
        for (const auto& x : j["data"][0]["embedding"]) {
            if (!x.is_number()) fail(ErrorCode::ProviderUnavailable, "embedding has non-numeric entries");
            v.push_back(x.get<double>());
        }
        if (v.empty()) fail(ErrorCode::ProviderUnavailable, "empty embedding");
        return v;
    }

    EmbeddingOptions options_;
    std::mutex embed_mutex_;
    std::map<std::string, std::vector<double>> vectors_;
};

} // namespace iotminer
