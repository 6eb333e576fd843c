#pragma once

#include <algorithm>
#include <chrono>
#include <memory>
#include <mutex>
#include <random>
#include <semaphore>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "parade/backend.hpp"
#include "parade/random.hpp"

namespace parade {

/// JSON-over-HTTP client for a remote model server.
///
///   POST /v1/score    {"context", "continuation"} -> {"tokens", "logprobs"}
///   POST /v1/generate {"prompt", "max_tokens"}     -> {"text"}
///   POST /v1/embed    {"text"}                     -> {"vector"}
///
/// At most `max_inflight` requests are outstanding at once. Transport errors,
/// 429 and 5xx are retried with exponential backoff and full jitter; every
/// response is validated before it is returned.
class HttpBackend final : public Backend {
  public:
    explicit HttpBackend(BackendConfig config)
        : m_config(std::move(config)), m_slots(std::max(1, m_config.max_inflight)),
          m_jitter(std::random_device{}())
    {
        if (m_config.kind != BackendKind::http) {
            throw ConfigError("HttpBackend requires kind=http");
        }
        m_config.validate();
        split_endpoint(*m_config.endpoint);
    }

    TokenLogProbs score_continuation(const std::string& context, const std::string& continuation) override
    {
        if (continuation.empty()) {
            return {};
        }
        auto body = post("/v1/score", {{"context", context}, {"continuation", continuation}});
        if (!body.contains("tokens") || !body["tokens"].is_array() || !body.contains("logprobs") ||
            !body["logprobs"].is_array()) {
            throw ProtocolError("/v1/score response lacks tokens/logprobs arrays");
        }
        TokenLogProbs out;
        try {
            for (const auto& t : body["tokens"]) {
                out.tokens.push_back(t.get<std::string>());
            }
            for (const auto& lp : body["logprobs"]) {
                out.logprobs.push_back(lp.get<double>());
            }
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("/v1/score response has wrong element types: ") + e.what());
        }
        out.validate();
        return out;
    }

    std::string generate_greedy(const std::string& prompt, int max_tokens) override
    {
        if (max_tokens < 1) {
            throw Error("generate_greedy: max_tokens must be >= 1");
        }
        auto body = post("/v1/generate", {{"prompt", prompt}, {"max_tokens", max_tokens}});
        if (!body.contains("text") || !body["text"].is_string()) {
            throw ProtocolError("/v1/generate response lacks a string \"text\"");
        }
        return body["text"].get<std::string>();
    }

    EmbeddingVector embed(const std::string& text) override
    {
        auto body = post("/v1/embed", {{"text", text}});
        if (!body.contains("vector") || !body["vector"].is_array()) {
            throw ProtocolError("/v1/embed response lacks a \"vector\" array");
        }
        EmbeddingVector v;
        for (const auto& x : body["vector"]) {
            if (!x.is_number()) {
                throw ProtocolError("/v1/embed vector has a non-numeric entry");
            }
            double value = x.get<double>();
            if (!std::isfinite(value)) {
                throw ProtocolError("/v1/embed vector has a non-finite entry");
            }
            v.push_back(value);
        }
        return v;
    }

    std::string id() const override { return "http:" + *m_config.endpoint; }
    int max_inflight() const override { return m_config.max_inflight; }

  private:
    void split_endpoint(const std::string& endpoint)
    {
        auto scheme = endpoint.find("://");
        auto path_start = endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        if (path_start == std::string::npos) {
            m_base = endpoint;
        } else {
            m_base = endpoint.substr(0, path_start);
            m_prefix = endpoint.substr(path_start);
            while (!m_prefix.empty() && m_prefix.back() == '/') {
                m_prefix.pop_back();
            }
        }
    }

    std::chrono::milliseconds backoff(int attempt)
    {
        auto ceiling = m_config.backoff_base.count() << std::min(attempt, 20);
        ceiling = std::min<long long>(ceiling, m_config.backoff_cap.count());
        if (ceiling <= 0) {
            return std::chrono::milliseconds{0};
        }
        std::lock_guard lock(m_jitter_mutex);
        return std::chrono::milliseconds{static_cast<long long>(m_jitter.below(static_cast<std::uint64_t>(ceiling) + 1))};
    }

    nlohmann::json post(const std::string& path, const nlohmann::json& payload)
    {
        struct Slot {
            std::counting_semaphore<>& sem;
            explicit Slot(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
            ~Slot() { sem.release(); }
        } slot(m_slots);

        const std::string body = payload.dump();
        const int attempts = m_config.retries + 1;
        std::string last_error;
        for (int attempt = 0; attempt < attempts; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(backoff(attempt - 1));
            }
            httplib::Client client(m_base);
            client.set_tcp_nodelay(true);
            auto secs = std::chrono::duration_cast<std::chrono::seconds>(m_config.timeout);
            auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(m_config.timeout - secs);
            client.set_connection_timeout(secs.count(), usecs.count());
            client.set_read_timeout(secs.count(), usecs.count());
            client.set_write_timeout(secs.count(), usecs.count());
            auto res = client.Post(m_prefix + path, body, "application/json");
            if (!res) {
                last_error = "POST " + path + " failed: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "POST " + path + " returned HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw ProtocolError("POST " + path + " returned HTTP " + std::to_string(res->status));
            }
            try {
                auto parsed = nlohmann::json::parse(res->body);
                if (!parsed.is_object()) {
                    throw ProtocolError("POST " + path + " returned a non-object JSON body");
                }
                return parsed;
            } catch (const nlohmann::json::parse_error& e) {
                throw ProtocolError("POST " + path + " returned invalid JSON: " + e.what());
            }
        }
        throw RetriableError(last_error, attempts);
    }

    BackendConfig m_config;
    std::string m_base;
    std::string m_prefix;
    std::counting_semaphore<> m_slots;
    std::mutex m_jitter_mutex;
    SplitMix64 m_jitter;
};

inline std::unique_ptr<Backend> make_backend(const BackendConfig& config)
{
    config.validate();
    if (config.kind == BackendKind::http) {
        return std::make_unique<HttpBackend>(config);
    }
    return std::make_unique<StubBackend>(StubBackend::kDefaultDim, config.max_inflight);
}

} // namespace parade
