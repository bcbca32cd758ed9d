#pragma once

// Shared helpers for the OpenAI-compatible HTTP clients. Including this header pulls in
// cpp-httplib; define CPPHTTPLIB_OPENSSL_SUPPORT before it (and link OpenSSL) for https endpoints.

#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>

// <resolv.h> (pulled in by httplib) defines _res, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif

#include "iotminer/error.hpp"

namespace iotminer::http {

struct Endpoint {
    std::string origin; ///< scheme://host[:port]
    std::string path;
};

inline Endpoint split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) fail(ErrorCode::InvalidConfig, "endpoint '" + url + "' has no scheme");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::unique_ptr<httplib::Client> make_client(const Endpoint& ep, double timeout_seconds) {
    auto client = std::make_unique<httplib::Client>(ep.origin);
    const auto sec = static_cast<time_t>(timeout_seconds);
    const auto usec = static_cast<time_t>((timeout_seconds - static_cast<double>(sec)) * 1e6);
    client->set_connection_timeout(sec, usec);
    client->set_read_timeout(sec, usec);
    client->set_write_timeout(sec, usec);
    return client;
}

inline std::string credential_from_env(const std::string& variable) {
    const char* value = variable.empty() ? nullptr : std::getenv(variable.c_str());
    return value ? std::string(value) : std::string{};
}

} // namespace iotminer::http
