// SPDX-License-Identifier: Apache-2.0
#pragma once

// Chat-completions client:
//   POST {base_url}/chat/completions  {model, messages: [{role, content}], temperature}
//   -> choices[0].message.content (opaque text)

#include "common.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace reflectrl {

/// Retryable failures that exhausted their budget, and unusable responses.
class TransportError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// 4xx responses: retrying cannot help.
class EndpointConfigError : public TransportError {
  public:
    using TransportError::TransportError;
};

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatCompletion {
    std::string content;
    int         retries = 0;
};

class ChatClient {
  public:
    virtual ~ChatClient() = default;

    virtual ChatCompletion complete(const std::vector<ChatMessage> & messages) = 0;

    virtual std::string model_id() const = 0;
};

struct EndpointConfig {
    std::string base_url;
    std::string model_name;
    std::string api_key;  // resolved from the environment, never from the file
    std::string api_key_env = "OPENAI_API_KEY";
    int         max_retries = 3;
    double      request_timeout = 60.0;  // seconds
    std::size_t max_concurrency = 4;
    double      temperature = 1.0;
    int         backoff_initial_ms = 500;
    int         backoff_max_ms = 8000;

    void validate() const {
        if (base_url.empty() || model_name.empty()) {
            throw ConfigError("endpoint config: base_url and model_name are required");
        }
        if (max_retries < 0) {
            throw ConfigError("endpoint config: max_retries must be >= 0");
        }
        if (max_concurrency < 1) {
            throw ConfigError("endpoint config: max_concurrency must be >= 1");
        }
        if (!(request_timeout > 0.0)) {
            throw ConfigError("endpoint config: request_timeout must be > 0");
        }
        if (backoff_initial_ms < 0 || backoff_max_ms < backoff_initial_ms) {
            throw ConfigError("endpoint config: need 0 <= backoff_initial_ms <= backoff_max_ms");
        }
    }
};

/// JSON config file; the API key is read from the environment variable named by `api_key_env`.
inline EndpointConfig endpoint_config_from_json(const json & j, double default_temperature) {
    EndpointConfig cfg;
    cfg.temperature = default_temperature;
    try {
        cfg.base_url           = j.at("base_url").get<std::string>();
        cfg.model_name         = j.at("model_name").get<std::string>();
        cfg.api_key_env        = j.value("api_key_env", cfg.api_key_env);
        cfg.max_retries        = j.value("max_retries", cfg.max_retries);
        cfg.request_timeout    = j.value("request_timeout", cfg.request_timeout);
        cfg.max_concurrency    = j.value("max_concurrency", cfg.max_concurrency);
        cfg.temperature        = j.value("temperature", cfg.temperature);
        cfg.backoff_initial_ms = j.value("backoff_initial_ms", cfg.backoff_initial_ms);
        cfg.backoff_max_ms     = j.value("backoff_max_ms", cfg.backoff_max_ms);
    } catch (const json::exception & e) {
        throw ConfigError(std::string("endpoint config: ") + e.what());
    }
    if (const char * key = std::getenv(cfg.api_key_env.c_str())) {
        cfg.api_key = key;
    }
    cfg.validate();
    return cfg;
}

inline json chat_request_json(const std::string & model, const std::vector<ChatMessage> & messages, double temperature) {
    json j;
    j["model"]    = model;
    j["messages"] = json::array();
    for (const auto & m : messages) {
        j["messages"].push_back({ { "role", m.role }, { "content", m.content } });
    }
    j["temperature"] = temperature;
    return j;
}

/// Extracts choices[0].message.content; throws TransportError on anything else.
inline std::string chat_response_content(std::string_view body) {
    try {
        auto j = json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception & e) {
        throw TransportError(std::string("malformed chat response: ") + e.what());
    }
}

namespace detail {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // without trailing slash
};

inline SplitUrl split_url(const std::string & url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("endpoint config: base_url needs a scheme: " + url);
    }
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw ConfigError("endpoint config: unsupported scheme '" + scheme + "'");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    out.origin = url.substr(0, path_start);
    out.path   = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!out.path.empty() && out.path.back() == '/') {
        out.path.pop_back();
    }
    return out;
}

}  // namespace detail

/// Blocking HTTP(S) client. Connection failures, timeouts, 429 and 5xx are retried with
/// exponential backoff up to `max_retries`; other 4xx fail immediately.
class HttpChatClient : public ChatClient {
  public:
    explicit HttpChatClient(EndpointConfig cfg) : cfg_(std::move(cfg)), url_(detail::split_url(cfg_.base_url)) {
        cfg_.validate();
    }

    std::string model_id() const override { return cfg_.model_name; }

    const EndpointConfig & config() const { return cfg_; }

    ChatCompletion complete(const std::vector<ChatMessage> & messages) override {
        const auto body = chat_request_json(cfg_.model_name, messages, cfg_.temperature).dump();
        const auto timeout = std::chrono::duration<double>(cfg_.request_timeout);
        const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);

        std::string last_error;
        int delay_ms = cfg_.backoff_initial_ms;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
                delay_ms = std::min(cfg_.backoff_max_ms, std::max(1, delay_ms * 2));
            }
            httplib::Client cli(url_.origin);
            cli.set_connection_timeout(timeout_us);
            cli.set_read_timeout(timeout_us);
            cli.set_write_timeout(timeout_us);
            httplib::Headers headers;
            if (!cfg_.api_key.empty()) {
                headers.emplace("Authorization", "Bearer " + cfg_.api_key);
            }
            auto res = cli.Post(url_.path + "/chat/completions", headers, body, "application/json");
            if (!res) {
                last_error = "request failed: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 200) {
                return { chat_response_content(res->body), attempt };
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            throw EndpointConfigError("HTTP " + std::to_string(res->status) + " from " + cfg_.base_url + ": " +
                                      res->body.substr(0, 200));
        }
        throw TransportError("gave up after " + std::to_string(cfg_.max_retries) + " retries: " + last_error);
    }

  private:
    EndpointConfig    cfg_;
    detail::SplitUrl  url_;
};

}  // namespace reflectrl
