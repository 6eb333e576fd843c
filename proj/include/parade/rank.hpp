#pragma once

#include <functional>
#include <string>
#include <vector>

#include "parade/backend.hpp"
#include "parade/core.hpp"
#include "parade/ingest.hpp"
#include "parade/parallel.hpp"
#include "parade/prompt.hpp"

namespace parade {

enum class Aggregation { sum, mean };

struct QLConfig {
    Aggregation aggregation = Aggregation::sum;
    std::vector<Demonstration> demos;
};

/// A backend failure while scoring one (query, document) pair.
class ScoringError : public Error {
  public:
    ScoringError(std::string query_id, std::string document_id, const std::string& cause)
        : Error("scoring query '" + query_id + "' against document '" + document_id + "': " + cause),
          m_query_id(std::move(query_id)), m_document_id(std::move(document_id))
    {}
    const std::string& query_id() const noexcept { return m_query_id; }
    const std::string& document_id() const noexcept { return m_document_id; }

  private:
    std::string m_query_id;
    std::string m_document_id;
};

inline double aggregate(const TokenLogProbs& lp, Aggregation how)
{
    if (how == Aggregation::sum) {
        return lp.sum();
    }
    if (lp.empty()) {
        throw Error("mean aggregation over an empty token sequence");
    }
    return lp.sum() / static_cast<double>(lp.size());
}

/// log P(query | demos, document) from the backend, aggregated per config.
inline double query_likelihood(Backend& backend, const PromptTemplate& tmpl, const QLConfig& config,
                               const Document& document, const Query& query)
{
    if (trim(query.text).empty()) {
        throw Error("query_likelihood: empty query text");
    }
    auto bundle = assemble_prompt(tmpl, config.demos, document, query);
    try {
        auto lp = backend.score_continuation(bundle.context, bundle.continuation);
        lp.validate();
        return aggregate(lp, config.aggregation);
    } catch (const ScoringError&) {
        throw;
    } catch (const Error& e) {
        throw ScoringError(query.id, document.id, e.what());
    }
}

using DocumentLookup = std::function<const Document*(const std::string&)>;

inline DocumentLookup lookup_in(const Corpus& corpus)
{
    return [&corpus](const std::string& id) { return corpus.find(id); };
}

/// Scores every first-stage candidate independently and re-sorts. Any failed
/// candidate fails the whole query.
inline RankedList rerank(Backend& backend, const PromptTemplate& tmpl, const QLConfig& config,
                         const RankedList& first_stage, const DocumentLookup& lookup, const Query& query)
{
    std::vector<const Document*> docs;
    docs.reserve(first_stage.size());
    for (const auto& e : first_stage.entries) {
        const Document* d = lookup(e.candidate.document_id);
        if (!d) {
            throw Error("candidate '" + e.candidate.document_id + "' of query '" + query.id +
                        "' is not in the corpus");
        }
        docs.push_back(d);
    }
    auto scores = parallel_map(docs.size(), backend.max_inflight(), [&](std::size_t i) {
        return query_likelihood(backend, tmpl, config, *docs[i], query);
    });
    std::vector<ScoredCandidate> scored;
    scored.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        scored.push_back({docs[i]->id, scores[i], Provenance::reranked, {}});
    }
    return make_ranked_list(query.id, std::move(scored));
}

} // namespace parade
