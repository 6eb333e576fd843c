#include "catch2/catch_amalgamated.hpp"
#include "parade/prompt.hpp"
#include "support.hpp"

using namespace parade;
using parade::testing::demo;

TEST_CASE("builtin templates expand the newline marker", "[prompt]")
{
    auto t = builtin_template("trec");
    CHECK(t.pair_template == "You said: DOCUMENT\nI googled: QUERY");
    CHECK(t.instruction == "[web] I will check whether what you said could answer my question.");
    CHECK(builtin_template("scifact").pair_template == "Argument: DOCUMENT\nMy scientific claim: QUERY");
    CHECK_THROWS_AS(builtin_template("nope"), ConfigError);
}

TEST_CASE("template slot invariants", "[prompt]")
{
    CHECK_THROWS_AS(PromptTemplate::make("i", "no slots"), ConfigError);
    CHECK_THROWS_AS(PromptTemplate::make("i", "QUERY then DOCUMENT"), ConfigError);
    CHECK_THROWS_AS(PromptTemplate::make("i", "DOCUMENT DOCUMENT QUERY"), ConfigError);
    CHECK_THROWS_AS(PromptTemplate::make("i", "DOCUMENT QUERY", "\n", 0), ConfigError);
    CHECK_NOTHROW(PromptTemplate::make("", "DOCUMENT QUERY"));
}

TEST_CASE("template JSON round trip and hash", "[prompt]")
{
    auto t = builtin_template("fiqa");
    auto back = PromptTemplate::from_json(t.to_json());
    CHECK(back.pair_template == t.pair_template);
    CHECK(back.hash() == t.hash());
    CHECK(builtin_template("trec").hash() != t.hash());
    CHECK_THROWS_AS(PromptTemplate::from_json(nlohmann::json{{"instruction", "x"}}), ConfigError);
}

TEST_CASE("template files load from disk", "[prompt]")
{
    parade::testing::TempDir dir;
    parade::testing::write_file(dir / "t.json",
                                R"({"instruction":"Go.","pair_template":"D: DOCUMENT <newline> Q: QUERY"})");
    auto t = load_template((dir / "t.json").string());
    CHECK(t.pair_template == "D: DOCUMENT\nQ: QUERY");
    parade::testing::write_file(dir / "bad.json", "{");
    CHECK_THROWS_AS(load_template((dir / "bad.json").string()), ConfigError);
    CHECK_THROWS_AS(load_template((dir / "missing.json").string()), ConfigError);
}

TEST_CASE("truncation keeps the first budget words", "[prompt]")
{
    Document d("d", "one  two\tthree four");
    CHECK(truncate_document(d, 2).text == "one two");
    CHECK(truncate_document(d, 4).text == "one  two\tthree four");
    CHECK_THROWS_AS(truncate_document(d, 0), Error);
}

TEST_CASE("render_pair with and without a query", "[prompt]")
{
    auto t = builtin_template("trec");
    Document d("d", "cats purr");
    CHECK(render_pair(t, d, std::string("why cats purr")) == "You said: cats purr\nI googled: why cats purr");
    CHECK(render_pair(t, d) == "You said: cats purr\nI googled:");
}

TEST_CASE("context assembly order and separators", "[prompt]")
{
    auto t = builtin_template("trec");
    std::vector<Demonstration> demos{demo("q1", "dq one", "d1", "demo doc one"),
                                     demo("q2", "dq two", "d2", "demo doc two")};
    Document test("dt", "test doc");
    auto ctx = assemble_context(t, demos, test);
    CHECK(ctx == t.instruction + "\n\n" + "You said: demo doc one\nI googled: dq one" + "\n\n" +
                     "You said: demo doc two\nI googled: dq two" + "\n\n" + "You said: test doc\nI googled:");
    auto no_instr = assemble_context(t, demos, test, PromptOptions{false});
    CHECK(no_instr.rfind("You said: demo doc one", 0) == 0);

    auto zero = assemble_prompt(t, {}, test, Query("q", "the query"));
    CHECK(zero.context == t.instruction + "\n\nYou said: test doc\nI googled:");
    CHECK(zero.continuation == "the query");
    CHECK(zero.demo_count == 0);

    std::vector<Demonstration> swapped{demos[1], demos[0]};
    CHECK(assemble_context(t, swapped, test) != ctx);
    std::vector<Demonstration> single{demo("q", "qz", "d", "dz")};
    auto one = assemble_prompt(t, single, test, Query("q", "the query"));
    CHECK(one.context.find("You said: dz\nI googled: qz") < one.context.find("You said: test doc"));
    CHECK(one.demo_count == 1);
}

TEST_CASE("prompt structure invariants", "[prompt][property]")
{
    auto t = PromptTemplate::make("INSTR", "<DOCUMENT|QUERY>");
    std::vector<Demonstration> demos;
    for (int n = 0; n < 6; ++n) {
        auto p = assemble_prompt(t, demos, Document("dt", "body"), Query("qt", "ask"));
        auto count = [&](const std::string& needle) {
            std::size_t c = 0;
            for (auto pos = p.context.find(needle); pos != std::string::npos; pos = p.context.find(needle, pos + 1)) {
                ++c;
            }
            return c;
        };
        CHECK(count("INSTR") == 1);
        CHECK(count("<") == demos.size() + 1);
        CHECK(p.continuation == "ask");
        demos.push_back(demo("q" + std::to_string(n), "dq", "d" + std::to_string(n), "dd"));
    }
}

TEST_CASE("demonstration documents are truncated to the budget", "[prompt]")
{
    auto t = PromptTemplate::make("", "DOCUMENT => QUERY", "|", 2);
    std::vector<Demonstration> demos{demo("q1", "q", "d1", "a b c d")};
    CHECK(assemble_context(t, demos, Document("dt", "x y z")) == "a b => q|x y =>");
}
