#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "iotminer/http_util.hpp"
#include "iotminer/labeling.hpp"

namespace iotminer {

/// Chat-completions client for OpenAI-compatible endpoints. The bearer token is read from the
/// environment variable named in LlmOptions::credential_env at each attempt.
class HttpLlmBackend : public LlmBackend {
public:
    std::string name() const override { return "http"; }

    /// Request body sent for `prompt`: {model, temperature, max_tokens, messages}.
    static nlohmann::json request_body(const std::string& prompt, const LlmOptions& options) {
        return {{"model", options.model},
                {"temperature", options.temperature},
                {"max_tokens", options.max_tokens},
                {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    }

    AttemptResult attempt(const std::string& prompt, const LlmOptions& options) override {
        const auto ep = http::split_url(options.endpoint);
        auto client = http::make_client(ep, options.timeout_seconds);
        httplib::Headers headers;
        const auto token = http::credential_from_env(options.credential_env);
        if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
        auto res = client->Post(ep.path, headers, request_body(prompt, options).dump(), "application/json");
        if (!res) {
            const auto err = res.error();
            const bool timeout = err == httplib::Error::Read || err == httplib::Error::Write ||
                                 err == httplib::Error::ConnectionTimeout;
            return {timeout ? AttemptStatus::Timeout : AttemptStatus::Transient, 0,
                    "transport error: " + httplib::to_string(err), {}, {}};
        }
        const int status = res->status;
        if (status == 401 || status == 403) return {AttemptStatus::Auth, status, "authentication rejected", {}, {}};
        if (status == 429) return {AttemptStatus::RateLimited, status, "rate limited", {}, {}};
        if (status == 408 || status == 504) return {AttemptStatus::Timeout, status, "upstream timeout", {}, {}};
        if (status >= 500) return {AttemptStatus::Transient, status, "server error " + std::to_string(status), {}, {}};
        if (status != 200) return {AttemptStatus::Fatal, status, "unexpected status " + std::to_string(status), {}, {}};

        auto body = nlohmann::json::parse(res->body, nullptr, false);
        if (body.is_discarded() || !body.contains("choices") || !body["choices"].is_array() || body["choices"].empty())
            return {AttemptStatus::Malformed, status, "response lacks choices", {}, {}};
        const auto& message = body["choices"][0].value("message", nlohmann::json::object());
        if (!message.contains("content") || !message["content"].is_string())
            return {AttemptStatus::Malformed, status, "response lacks message content", {}, {}};
        AttemptResult ok{AttemptStatus::Ok, status, message["content"].get<std::string>(), {}, {}};
        if (body.contains("usage") && body["usage"].is_object()) {
            const auto& usage = body["usage"];
            if (usage.contains("prompt_tokens")) ok.prompt_tokens = usage["prompt_tokens"].get<long long>();
            if (usage.contains("completion_tokens")) ok.completion_tokens = usage["completion_tokens"].get<long long>();
        }
        return ok;
    }
};

} // namespace iotminer
