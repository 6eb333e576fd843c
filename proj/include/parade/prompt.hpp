#pragma once

#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "parade/core.hpp"
#include "parade/text.hpp"

namespace parade {

inline constexpr std::string_view kDocumentSlot = "DOCUMENT";
inline constexpr std::string_view kQuerySlot = "QUERY";

/// Instruction plus a query-document pair template such as
/// "You said: DOCUMENT <newline> I googled: QUERY".
struct PromptTemplate {
    std::string instruction;
    std::string pair_template;
    std::string separator = "\n\n";
    int doc_token_budget = 512;

    /// Rewrites the `<newline>` marker (with or without one surrounding space
    /// on each side) to '\n', then checks the slot invariants.
    static PromptTemplate make(std::string instruction, std::string pair_template,
                               std::string separator = "\n\n", int doc_token_budget = 512)
    {
        replace_all(pair_template, " <newline> ", "\n");
        replace_all(pair_template, "<newline>", "\n");
        PromptTemplate t{std::move(instruction), std::move(pair_template), std::move(separator),
                         doc_token_budget};
        t.validate();
        return t;
    }

    void validate() const
    {
        if (count_occurrences(pair_template, kDocumentSlot) != 1 ||
            count_occurrences(pair_template, kQuerySlot) != 1) {
            throw ConfigError("pair_template must contain DOCUMENT and QUERY exactly once");
        }
        if (pair_template.find(kDocumentSlot) > pair_template.find(kQuerySlot)) {
            throw ConfigError("pair_template must place DOCUMENT before QUERY");
        }
        if (doc_token_budget < 1) {
            throw ConfigError("doc_token_budget must be >= 1");
        }
    }

    nlohmann::json to_json() const
    {
        return {{"instruction", instruction},
                {"pair_template", pair_template},
                {"separator", separator},
                {"doc_token_budget", doc_token_budget}};
    }

    static PromptTemplate from_json(const nlohmann::json& j)
    {
        try {
            return make(j.at("instruction").get<std::string>(), j.at("pair_template").get<std::string>(),
                        j.value("separator", std::string("\n\n")), j.value("doc_token_budget", 512));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("invalid template: ") + e.what());
        }
    }

    std::string hash() const { return hex64(fnv1a64(to_json().dump())); }
};

inline PromptTemplate load_template(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open template '" + path + "'");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("template '" + path + "' is not valid JSON: " + e.what());
    }
    return PromptTemplate::from_json(j);
}

/// Templates for the web-search style datasets (TREC DL, FiQA) and Scifact.
inline PromptTemplate builtin_template(std::string_view name)
{
    if (name == "trec") {
        return PromptTemplate::make("[web] I will check whether what you said could answer my question.",
                                    "You said: DOCUMENT <newline> I googled: QUERY");
    }
    if (name == "fiqa") {
        return PromptTemplate::make("[web] I will check if what you said could verify my question.",
                                    "You said: DOCUMENT <newline> I googled: QUERY");
    }
    if (name == "scifact") {
        return PromptTemplate::make(
            "[web] I will check if the argument you said could verify my scientific claim.",
            "Argument: DOCUMENT <newline> My scientific claim: QUERY");
    }
    throw ConfigError("unknown builtin template '" + std::string(name) + "'");
}

/// Keeps the first `budget` whitespace-separated words, joined by single
/// spaces. Documents within budget are returned untouched.
inline Document truncate_document(const Document& document, int budget)
{
    if (budget < 1) {
        throw Error("truncate_document: budget must be >= 1");
    }
    auto words = split_whitespace(document.text);
    if (words.size() <= static_cast<std::size_t>(budget)) {
        return document;
    }
    std::string text;
    for (int i = 0; i < budget; ++i) {
        if (i) {
            text += ' ';
        }
        text += words[static_cast<std::size_t>(i)];
    }
    Document out = document;
    out.text = std::move(text);
    return out;
}

/// Substitutes the (truncated) document and, when given, the query. Without a
/// query the rendering ends at the query prefix, trailing blanks removed.
inline std::string render_pair(const PromptTemplate& tmpl, const Document& document,
                               const std::string* query_text)
{
    if (document.text.empty()) {
        throw Error("render_pair: document text is empty");
    }
    const std::string& pt = tmpl.pair_template;
    const auto dpos = pt.find(kDocumentSlot);
    const auto qpos = pt.find(kQuerySlot);
    std::string out = pt.substr(0, dpos);
    out += truncate_document(document, tmpl.doc_token_budget).text;
    std::string middle = pt.substr(dpos + kDocumentSlot.size(), qpos - dpos - kDocumentSlot.size());
    if (query_text) {
        out += middle;
        out += *query_text;
        out += pt.substr(qpos + kQuerySlot.size());
    } else {
        while (!middle.empty() && (middle.back() == ' ' || middle.back() == '\t')) {
            middle.pop_back();
        }
        out += middle;
    }
    return out;
}

inline std::string render_pair(const PromptTemplate& tmpl, const Document& document,
                               const std::string& query_text)
{
    return render_pair(tmpl, document, &query_text);
}

inline std::string render_pair(const PromptTemplate& tmpl, const Document& document)
{
    return render_pair(tmpl, document, nullptr);
}

struct PromptBundle {
    std::string context;
    std::string continuation;
    int demo_count = 0;
};

struct PromptOptions {
    bool include_instruction = true;
};

/// Instruction, then every demonstration with its query filled in, then the
/// test pair cut at the query prefix; blocks joined by the separator.
inline std::string assemble_context(const PromptTemplate& tmpl, std::span<const Demonstration> demos,
                                    const Document& test_doc, PromptOptions options = {})
{
    std::string context;
    bool first = true;
    auto append = [&](const std::string& block) {
        if (!first) {
            context += tmpl.separator;
        }
        context += block;
        first = false;
    };
    if (options.include_instruction && !tmpl.instruction.empty()) {
        append(tmpl.instruction);
    }
    for (const auto& demo : demos) {
        append(render_pair(tmpl, demo.document, demo.query.text));
    }
    append(render_pair(tmpl, test_doc));
    return context;
}

inline PromptBundle assemble_prompt(const PromptTemplate& tmpl, std::span<const Demonstration> demos,
                                    const Document& test_doc, const Query& test_query,
                                    PromptOptions options = {})
{
    return {assemble_context(tmpl, demos, test_doc, options), test_query.text,
            static_cast<int>(demos.size())};
}

} // namespace parade
