#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "parade/backend.hpp"
#include "parade/eval.hpp"
#include "parade/parallel.hpp"
#include "parade/prompt.hpp"

namespace parade {

struct GeneratedQuestion {
    std::string query_id;
    std::string passage_id;
    std::string demo_id;
    std::string text;
};

inline nlohmann::json to_json(const GeneratedQuestion& g)
{
    return {{"query_id", g.query_id}, {"passage_id", g.passage_id}, {"demo_id", g.demo_id}, {"text", g.text}};
}

inline GeneratedQuestion generated_from_json(const nlohmann::json& j)
{
    return {j.at("query_id").get<std::string>(), j.at("passage_id").get<std::string>(),
            j.at("demo_id").get<std::string>(), j.at("text").get<std::string>()};
}

struct GenerationFailure {
    std::string query_id;
    std::string passage_id;
    std::string message;
};

struct GenerationBatch {
    std::vector<GeneratedQuestion> questions;
    std::vector<GenerationFailure> failures;
};

/// One greedy generation per passage from a one-shot prompt that ends at the
/// query prefix. Per-passage failures are recorded and skipped.
inline GenerationBatch generate_for_passages(Backend& backend, const PromptTemplate& tmpl, const Demonstration& demo,
                                             const std::vector<std::pair<std::string, Document>>& passages,
                                             int max_tokens = 32)
{
    if (passages.empty()) {
        throw Error("generate_for_passages: no passages");
    }
    if (max_tokens < 1) {
        throw Error("generate_for_passages: max_tokens must be >= 1");
    }
    const std::vector<Demonstration> shots{demo};
    struct Outcome {
        std::optional<std::string> text;
        std::string error;
    };
    auto outcomes = parallel_map(passages.size(), backend.max_inflight(), [&](std::size_t i) {
        try {
            auto prompt = assemble_context(tmpl, shots, passages[i].second);
            return Outcome{backend.generate_greedy(prompt, max_tokens), {}};
        } catch (const Error& e) {
            return Outcome{std::nullopt, e.what()};
        }
    });
    GenerationBatch batch;
    for (std::size_t i = 0; i < passages.size(); ++i) {
        const auto& [qid, doc] = passages[i];
        if (outcomes[i].text) {
            batch.questions.push_back({qid, doc.id, demo.id(), std::move(*outcomes[i].text)});
        } else {
            batch.failures.push_back({qid, doc.id, outcomes[i].error});
        }
    }
    return batch;
}

struct QGenScore {
    std::string demo_id;
    double avg_max_similarity = 0.0;
    std::size_t queries_scored = 0;
    std::vector<std::string> excluded_queries; // no surviving generations

    nlohmann::json to_json() const
    {
        return {{"demo_id", demo_id},
                {"avg_max_similarity", avg_max_similarity},
                {"queries_scored", queries_scored},
                {"queries_excluded", excluded_queries.size()},
                {"excluded_queries", excluded_queries}};
    }
};

/// Per query, the best cosine between the ground-truth query and any of its
/// generated questions; averaged over queries that have generations.
inline QGenScore score_qgen(Backend& embedder, const std::map<std::string, Query>& truth,
                            const std::vector<GeneratedQuestion>& generated)
{
    QGenScore score;
    std::set<std::string> demo_ids;
    for (const auto& g : generated) {
        if (!truth.count(g.query_id)) {
            throw Error("generated question refers to unknown query '" + g.query_id + "'");
        }
        demo_ids.insert(g.demo_id);
    }
    if (demo_ids.size() > 1) {
        throw Error("score_qgen: generations from more than one demonstration");
    }
    if (!demo_ids.empty()) {
        score.demo_id = *demo_ids.begin();
    }

    std::map<std::string, std::vector<const GeneratedQuestion*>> by_query;
    for (const auto& g : generated) {
        by_query[g.query_id].push_back(&g);
    }
    double total = 0.0;
    for (const auto& [qid, query] : truth) {
        auto it = by_query.find(qid);
        if (it == by_query.end()) {
            score.excluded_queries.push_back(qid);
            continue;
        }
        const auto target = embedder.embed(query.text);
        double best = -1.0;
        for (const auto* g : it->second) {
            best = std::max(best, cosine(embedder.embed(g->text), target));
        }
        total += best;
        ++score.queries_scored;
    }
    if (score.queries_scored == 0) {
        throw Error("score_qgen: no query has a generated question");
    }
    score.avg_max_similarity = total / static_cast<double>(score.queries_scored);
    return score;
}

struct PopulationComparison {
    double percentile = 0.0; // fraction of the population strictly above the subject
    double p_two_tailed = 1.0;
    double t = 0.0;
    Descriptive population;

    nlohmann::json to_json() const
    {
        return {{"percentile", percentile}, {"p", p_two_tailed}, {"t", t}, {"population", population.to_json()}};
    }
};

/// Where one demonstration's qgen score sits among a population of others.
inline PopulationComparison compare_demo_populations(const std::vector<QGenScore>& population, const QGenScore& subject)
{
    if (population.size() < 2) {
        throw Error("compare_demo_populations: population needs at least 2 scores");
    }
    std::vector<double> values;
    for (const auto& s : population) {
        values.push_back(s.avg_max_similarity);
    }
    PopulationComparison out;
    auto above = std::count_if(values.begin(), values.end(),
                               [&](double v) { return v > subject.avg_max_similarity; });
    out.percentile = static_cast<double>(above) / static_cast<double>(values.size());
    auto test = t_test_one_sample(values, subject.avg_max_similarity);
    out.p_two_tailed = test.p_two_tailed;
    out.t = test.t;
    out.population = describe(values);
    return out;
}

} // namespace parade
