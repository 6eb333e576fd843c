#include <atomic>
#include <chrono>
#include <memory>

#include "catch2/catch_amalgamated.hpp"
#include "local_server.hpp"
#include "parade/http_backend.hpp"
#include "parade/parallel.hpp"
#include "parade/stub_server.hpp"

using namespace parade;
using parade::testing::LocalServer;

namespace {

BackendConfig http_config(const std::string& url, int retries = 2)
{
    BackendConfig c;
    c.kind = BackendKind::http;
    c.endpoint = url;
    c.timeout = std::chrono::milliseconds(2000);
    c.retries = retries;
    c.backoff_base = std::chrono::milliseconds(1);
    c.backoff_cap = std::chrono::milliseconds(5);
    c.max_inflight = 4;
    return c;
}

void reply(httplib::Response& res, const nlohmann::json& body)
{
    res.set_content(body.dump(), "application/json");
}

} // namespace

TEST_CASE("http backend agrees with the stub it fronts", "[http]")
{
    LocalServer srv;
    auto stub = std::make_shared<StubBackend>();
    mount_backend_routes(srv.server(), stub);
    srv.start();

    HttpBackend http(http_config(srv.url()));
    auto a = http.score_continuation("the cat sat", "cat dog");
    auto b = stub->score_continuation("the cat sat", "cat dog");
    CHECK(a.tokens == b.tokens);
    CHECK(a.logprobs == b.logprobs);
    CHECK(http.generate_greedy("b a b", 5) == stub->generate_greedy("b a b", 5));
    CHECK(http.embed("hello world") == stub->embed("hello world"));
    CHECK(http.score_continuation("ctx", "").empty());
    CHECK(http.id() == "http:" + srv.url());
}

TEST_CASE("http backend honours an endpoint path prefix", "[http]")
{
    LocalServer srv;
    srv.server().Post("/api/v1/generate", [](const httplib::Request&, httplib::Response& res) {
        reply(res, {{"text", "prefixed"}});
    });
    srv.start();
    HttpBackend http(http_config(srv.url() + "/api/"));
    CHECK(http.generate_greedy("x", 1) == "prefixed");
}

TEST_CASE("http backend retries 503 and 429 then succeeds", "[http]")
{
    LocalServer srv;
    std::atomic<int> calls{0};
    srv.server().Post("/v1/generate", [&](const httplib::Request&, httplib::Response& res) {
        int n = calls++;
        if (n == 0) {
            res.status = 503;
            return;
        }
        if (n == 1) {
            res.status = 429;
            return;
        }
        reply(res, {{"text", "ok"}});
    });
    srv.start();
    HttpBackend http(http_config(srv.url(), 2));
    CHECK(http.generate_greedy("x", 1) == "ok");
    CHECK(calls == 3);
}

TEST_CASE("http backend gives up after the retry budget", "[http]")
{
    LocalServer srv;
    std::atomic<int> calls{0};
    srv.server().Post("/v1/generate", [&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 500;
    });
    srv.start();
    HttpBackend http(http_config(srv.url(), 2));
    try {
        http.generate_greedy("x", 1);
        FAIL("expected RetriableError");
    } catch (const RetriableError& e) {
        CHECK(e.attempts() == 3);
    }
    CHECK(calls == 3);
}

TEST_CASE("http backend reports unreachable servers as retriable", "[http]")
{
    int port = parade::testing::unused_port();
    HttpBackend http(http_config("http://127.0.0.1:" + std::to_string(port), 1));
    try {
        http.embed("x");
        FAIL("expected RetriableError");
    } catch (const RetriableError& e) {
        CHECK(e.attempts() == 2);
    }
}

TEST_CASE("http backend rejects malformed responses", "[http]")
{
    LocalServer srv;
    srv.server().Post("/v1/score", [](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        auto mode = body["continuation"].get<std::string>();
        if (mode == "positive") {
            reply(res, {{"tokens", {"positive"}}, {"logprobs", {0.5}}});
        } else if (mode == "mismatch") {
            reply(res, {{"tokens", {"a", "b"}}, {"logprobs", {-1.0}}});
        } else if (mode == "missing") {
            reply(res, {{"tokens", {"a"}}});
        } else if (mode == "badjson") {
            res.set_content("{not json", "application/json");
        } else {
            res.status = 404;
        }
    });
    srv.start();
    HttpBackend http(http_config(srv.url(), 0));
    CHECK_THROWS_AS(http.score_continuation("c", "positive"), ProtocolError);
    CHECK_THROWS_AS(http.score_continuation("c", "mismatch"), ProtocolError);
    CHECK_THROWS_AS(http.score_continuation("c", "missing"), ProtocolError);
    CHECK_THROWS_AS(http.score_continuation("c", "badjson"), ProtocolError);
    CHECK_THROWS_AS(http.score_continuation("c", "notfound"), ProtocolError);
}

TEST_CASE("http backend never exceeds max_inflight", "[http]")
{
    LocalServer srv;
    std::atomic<int> current{0};
    std::atomic<int> peak{0};
    srv.server().new_task_queue = [] { return new httplib::ThreadPool(16); };
    srv.server().Post("/v1/embed", [&](const httplib::Request&, httplib::Response& res) {
        int now = ++current;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --current;
        reply(res, {{"vector", {1.0, 0.0}}});
    });
    srv.start();
    auto cfg = http_config(srv.url());
    cfg.max_inflight = 3;
    HttpBackend http(cfg);
    parallel_map(24, 12, [&](std::size_t) { return http.embed("x"); });
    CHECK(peak.load() <= 3);
    CHECK(peak.load() >= 1);
}

TEST_CASE("make_backend picks the implementation by kind", "[http]")
{
    BackendConfig stub;
    CHECK(make_backend(stub)->id() == "stub-v1");
    CHECK_THROWS_AS(make_backend(http_config("")), ConfigError);
}
