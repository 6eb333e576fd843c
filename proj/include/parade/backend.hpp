#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "parade/core.hpp"
#include "parade/text.hpp"

namespace parade {

class BackendError : public Error {
  public:
    using Error::Error;
};

/// Transport failure that survived every retry.
class RetriableError : public BackendError {
  public:
    RetriableError(const std::string& message, int attempts)
        : BackendError(message + " after " + std::to_string(attempts) + " attempt(s)"),
          m_attempts(attempts)
    {}
    int attempts() const noexcept { return m_attempts; }

  private:
    int m_attempts;
};

/// The server answered, but with something that violates the wire contract.
class ProtocolError : public BackendError {
  public:
    using BackendError::BackendError;
};

struct TokenLogProbs {
    std::vector<std::string> tokens;
    std::vector<double> logprobs;

    std::size_t size() const noexcept { return logprobs.size(); }
    bool empty() const noexcept { return logprobs.empty(); }

    double sum() const
    {
        double total = 0.0;
        for (double lp : logprobs) {
            total += lp;
        }
        return total;
    }

    /// Throws ProtocolError unless lengths match and every value is finite and <= 0.
    void validate() const
    {
        if (tokens.size() != logprobs.size()) {
            throw ProtocolError("token/logprob length mismatch (" + std::to_string(tokens.size()) +
                                " vs " + std::to_string(logprobs.size()) + ")");
        }
        for (double lp : logprobs) {
            if (!std::isfinite(lp) || lp > 0.0) {
                throw ProtocolError("invalid logprob " + std::to_string(lp));
            }
        }
    }
};

using EmbeddingVector = std::vector<double>;

inline double l2_norm(const EmbeddingVector& v)
{
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

/// Cosine similarity; 0 when either side is the zero vector.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b)
{
    if (a.size() != b.size()) {
        throw Error("cosine: dimension mismatch");
    }
    double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
    }
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

enum class BackendKind { http, stub };

struct BackendConfig {
    BackendKind kind = BackendKind::stub;
    std::optional<std::string> endpoint;
    std::chrono::milliseconds timeout{30000};
    int max_inflight = 8;
    int retries = 3;
    std::chrono::milliseconds backoff_base{100};
    std::chrono::milliseconds backoff_cap{5000};

    void validate() const
    {
        if (kind == BackendKind::http && (!endpoint || endpoint->empty())) {
            throw ConfigError("backend endpoint is required for kind=http");
        }
        if (kind == BackendKind::stub && endpoint) {
            throw ConfigError("backend endpoint is only valid for kind=http");
        }
        if (max_inflight < 1) {
            throw ConfigError("backend max_inflight must be >= 1");
        }
        if (retries < 0) {
            throw ConfigError("backend retries must be >= 0");
        }
    }
};

/// Every model interaction goes through this. Implementations are shareable
/// across threads.
class Backend {
  public:
    virtual ~Backend() = default;

    /// One logprob per continuation token, each conditioned on the context
    /// and all earlier continuation tokens.
    virtual TokenLogProbs score_continuation(const std::string& context,
                                             const std::string& continuation) = 0;
    virtual std::string generate_greedy(const std::string& prompt, int max_tokens) = 0;
    virtual EmbeddingVector embed(const std::string& text) = 0;

    /// Stable identity used for cache keys and provenance.
    virtual std::string id() const = 0;
    virtual int max_inflight() const { return 1; }
};

/// Deterministic in-process substitute for a language model.
///
/// Scoring: a continuation token gets -1.0 when it already occurs in the left
/// context (the original context plus the continuation tokens before it) and
/// -5.0 otherwise. Generation emits the prompt's distinct tokens by descending
/// frequency, ties ascending. Embedding is a 64-slot hashed bag of words
/// (FNV-1a-64 mod 64), L2-normalized.
class StubBackend final : public Backend {
  public:
    static constexpr double kSeen = -1.0;
    static constexpr double kUnseen = -5.0;
    static constexpr std::size_t kDefaultDim = 64;

    explicit StubBackend(std::size_t dim = kDefaultDim, int max_inflight = 1)
        : m_dim(dim), m_max_inflight(max_inflight)
    {}

    TokenLogProbs score_continuation(const std::string& context, const std::string& continuation) override
    {
        TokenLogProbs out;
        auto ctx = tokenize(context);
        std::unordered_set<std::string> seen(ctx.begin(), ctx.end());
        for (auto& tok : tokenize(continuation)) {
            out.logprobs.push_back(seen.count(tok) ? kSeen : kUnseen);
            seen.insert(tok);
            out.tokens.push_back(std::move(tok));
        }
        return out;
    }

    std::string generate_greedy(const std::string& prompt, int max_tokens) override
    {
        if (max_tokens < 1) {
            throw Error("generate_greedy: max_tokens must be >= 1");
        }
        std::map<std::string, int> freq;
        for (auto& tok : tokenize(prompt)) {
            ++freq[tok];
        }
        std::vector<std::pair<std::string, int>> order(freq.begin(), freq.end());
        std::stable_sort(order.begin(), order.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        std::string text;
        int emitted = 0;
        for (const auto& [tok, count] : order) {
            if (emitted == max_tokens) {
                break;
            }
            if (emitted++) {
                text += ' ';
            }
            text += tok;
        }
        return text;
    }

    EmbeddingVector embed(const std::string& text) override
    {
        EmbeddingVector v(m_dim, 0.0);
        for (const auto& tok : tokenize(text)) {
            v[fnv1a64(tok) % m_dim] += 1.0;
        }
        double n = l2_norm(v);
        if (n > 0.0) {
            for (double& x : v) {
                x /= n;
            }
        }
        return v;
    }

    std::string id() const override { return "stub-v1"; }
    int max_inflight() const override { return m_max_inflight; }

  private:
    std::size_t m_dim;
    int m_max_inflight;
};

} // namespace parade
