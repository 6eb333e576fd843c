#include <algorithm>
#include <cmath>
#include <random>

#include "catch2/catch_amalgamated.hpp"
#include "parade/backend.hpp"
#include "parade/parallel.hpp"

using namespace parade;
using Catch::Matchers::WithinAbs;

TEST_CASE("stub scores seen tokens -1 and unseen -5", "[backend][stub]")
{
    StubBackend stub;
    auto lp = stub.score_continuation("the cat sat", "cat dog dog");
    CHECK(lp.tokens == std::vector<std::string>{"cat", "dog", "dog"});
    CHECK(lp.logprobs == std::vector<double>{-1.0, -5.0, -1.0});
    CHECK(lp.sum() == -7.0);
    CHECK(stub.score_continuation("anything", "").empty());
    CHECK(stub.score_continuation("a b", "a c").logprobs == std::vector<double>{-1.0, -5.0});
    CHECK(stub.score_continuation("", "x x").logprobs == std::vector<double>{-5.0, -1.0});
}

TEST_CASE("stub operations are deterministic and bounded", "[backend][stub][property]")
{
    StubBackend stub;
    const std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
    std::mt19937_64 gen(5);
    auto text = [&](std::size_t n) {
        std::string s;
        for (std::size_t i = 0; i < n; ++i) {
            s += vocab[gen() % vocab.size()] + " ";
        }
        return s;
    };
    for (int trial = 0; trial < 200; ++trial) {
        auto ctx = text(gen() % 6), cont = text(1 + gen() % 4), extra = text(1 + gen() % 3);
        auto lp = stub.score_continuation(ctx, cont);
        CHECK(lp.logprobs == stub.score_continuation(ctx, cont).logprobs);
        for (double v : lp.logprobs) {
            CHECK((v == -1.0 || v == -5.0));
        }
        // Extending the context never lowers any token's logprob.
        auto wider = stub.score_continuation(ctx + " " + extra, cont);
        for (std::size_t i = 0; i < lp.size(); ++i) {
            CHECK(wider.logprobs[i] >= lp.logprobs[i]);
        }
        CHECK(stub.generate_greedy(ctx, 3) == stub.generate_greedy(ctx, 3));
        double norm = l2_norm(stub.embed(ctx));
        CHECK((norm == 0.0 || std::abs(norm - 1.0) < 1e-12));
    }
}

TEST_CASE("stub generation orders by frequency then lexicographically", "[backend][stub]")
{
    StubBackend stub;
    CHECK(stub.generate_greedy("b a c a b a", 10) == "a b c");
    CHECK(stub.generate_greedy("zeta alpha", 1) == "alpha");
    CHECK(stub.generate_greedy("b a a", 2) == "a b");
    CHECK(stub.generate_greedy("z", 5) == "z");
    CHECK(stub.generate_greedy("", 3).empty());
    CHECK_THROWS_AS(stub.generate_greedy("x", 0), Error);
}

TEST_CASE("stub embeddings are unit length hashed bags", "[backend][stub]")
{
    StubBackend stub;
    auto v = stub.embed("hello world hello");
    REQUIRE(v.size() == 64);
    CHECK_THAT(l2_norm(v), WithinAbs(1.0, 1e-12));
    CHECK_THAT(cosine(v, stub.embed("HELLO, world! hello")), WithinAbs(1.0, 1e-12));
    CHECK(stub.embed("a a") == stub.embed("a"));
    CHECK(stub.embed("dog cat") == stub.embed("cat dog"));
    CHECK(l2_norm(stub.embed("")) == 0.0);
    auto zero = stub.embed("...");
    CHECK(l2_norm(zero) == 0.0);
    CHECK(cosine(zero, v) == 0.0);
    CHECK_THROWS_AS(cosine(v, EmbeddingVector(3, 1.0)), Error);
}

TEST_CASE("stub scoring matches a direct reimplementation", "[backend][stub][property]")
{
    // Oracle: quadratic scan of the left context for every position.
    std::mt19937_64 gen(3);
    const std::vector<std::string> vocab{"a", "b", "c", "d", "e", "f", "g"};
    StubBackend stub;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> ctx, cont;
        for (std::size_t i = gen() % 6; i > 0; --i) {
            ctx.push_back(vocab[gen() % vocab.size()]);
        }
        for (std::size_t i = 1 + gen() % 6; i > 0; --i) {
            cont.push_back(vocab[gen() % vocab.size()]);
        }
        std::string ctx_text, cont_text;
        for (auto& t : ctx) {
            ctx_text += t + " ";
        }
        for (auto& t : cont) {
            cont_text += t + " ";
        }
        auto lp = stub.score_continuation(ctx_text, cont_text);
        REQUIRE(lp.size() == cont.size());
        for (std::size_t i = 0; i < cont.size(); ++i) {
            std::vector<std::string> left = ctx;
            left.insert(left.end(), cont.begin(), cont.begin() + static_cast<std::ptrdiff_t>(i));
            bool seen = std::find(left.begin(), left.end(), cont[i]) != left.end();
            CHECK(lp.logprobs[i] == (seen ? -1.0 : -5.0));
        }
    }
}

TEST_CASE("token logprob validation", "[backend]")
{
    TokenLogProbs ok{{"a"}, {-0.5}};
    CHECK_NOTHROW(ok.validate());
    CHECK_THROWS_AS((TokenLogProbs{{"a"}, {0.5}}.validate()), ProtocolError);
    CHECK_THROWS_AS((TokenLogProbs{{"a", "b"}, {-0.5}}.validate()), ProtocolError);
    CHECK_THROWS_AS((TokenLogProbs{{"a"}, {std::nan("")}}.validate()), ProtocolError);
}

TEST_CASE("backend config validation", "[backend]")
{
    BackendConfig http;
    http.kind = BackendKind::http;
    CHECK_THROWS_AS(http.validate(), ConfigError);
    http.endpoint = "http://127.0.0.1:1";
    CHECK_NOTHROW(http.validate());
    BackendConfig stub;
    stub.max_inflight = 0;
    CHECK_THROWS_AS(stub.validate(), ConfigError);
}

TEST_CASE("parallel_map keeps order and rethrows the first failure", "[backend][parallel]")
{
    auto squares = parallel_map(100, 4, [](std::size_t i) { return i * i; });
    for (std::size_t i = 0; i < squares.size(); ++i) {
        CHECK(squares[i] == i * i);
    }
    try {
        parallel_map(20, 4, [](std::size_t i) -> int {
            if (i == 7 || i == 13) {
                throw Error("fail " + std::to_string(i));
            }
            return 0;
        });
        FAIL("expected exception");
    } catch (const Error& e) {
        CHECK(std::string(e.what()) == "fail 7");
    }
    CHECK(parallel_map(0, 4, [](std::size_t) { return 1; }).empty());
}
