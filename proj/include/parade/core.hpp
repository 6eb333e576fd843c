#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "parade/text.hpp"

namespace parade {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or record. Carries the 1-based line when known.
class InputError : public Error {
  public:
    InputError(const std::string& message, std::size_t line = 0)
        : Error(line ? message + " (line " + std::to_string(line) + ")" : message), m_line(line)
    {}
    std::size_t line() const noexcept { return m_line; }

  private:
    std::size_t m_line;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

struct Query {
    std::string id;
    std::string text;

    Query() = default;
    Query(std::string id_, std::string text_) : id(std::move(id_)), text(std::move(text_))
    {
        if (id.empty()) {
            throw InputError("query id must be non-empty");
        }
        if (trim(text).empty()) {
            throw InputError("query '" + id + "' has empty text");
        }
    }
};

struct Document {
    std::string id;
    std::string text;
    std::string title;

    Document() = default;
    Document(std::string id_, std::string text_, std::string title_ = {})
        : id(std::move(id_)), text(std::move(text_)), title(std::move(title_))
    {
        if (id.empty()) {
            throw InputError("document id must be non-empty");
        }
        if (text.empty()) {
            throw InputError("document '" + id + "' has empty text");
        }
    }
};

/// A positive query-document pair placed in the prompt ahead of the test pair.
struct Demonstration {
    Query query;
    Document document;
    std::optional<int> source_rank;
    std::optional<bool> label_ok;

    std::string id() const { return query.id + ":" + document.id; }
};

enum class Provenance { first_stage, reranked };

struct ScoredCandidate {
    std::string document_id;
    double score = 0.0;
    Provenance provenance = Provenance::first_stage;
    std::optional<int> stated_rank; // rank column of an input run, diagnostics only
};

struct RankedEntry {
    ScoredCandidate candidate;
    int rank = 0;
};

struct RankedList {
    std::string query_id;
    std::vector<RankedEntry> entries;

    std::size_t size() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }

    std::vector<std::string> document_ids() const
    {
        std::vector<std::string> ids;
        ids.reserve(entries.size());
        for (const auto& e : entries) {
            ids.push_back(e.candidate.document_id);
        }
        return ids;
    }
};

/// Sorts by score descending with document_id ascending (byte order) as the
/// tie-break, then assigns ranks 1..n.
inline RankedList make_ranked_list(std::string query_id, std::vector<ScoredCandidate> scored)
{
    std::unordered_set<std::string> seen;
    seen.reserve(scored.size());
    for (const auto& c : scored) {
        if (!std::isfinite(c.score)) {
            throw Error("non-finite score for document '" + c.document_id + "' in query '" +
                        query_id + "'");
        }
        if (!seen.insert(c.document_id).second) {
            throw Error("duplicate document id '" + c.document_id + "' in query '" + query_id +
                        "'");
        }
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.document_id < b.document_id;
    });
    RankedList list{std::move(query_id), {}};
    list.entries.reserve(scored.size());
    int rank = 1;
    for (auto& c : scored) {
        list.entries.push_back({std::move(c), rank++});
    }
    return list;
}

/// Graded relevance; absent pairs are grade 0.
class Judgments {
  public:
    void set(const std::string& query_id, const std::string& document_id, int grade)
    {
        if (grade < 0) {
            throw InputError("relevance grade must be non-negative");
        }
        m_grades[query_id][document_id] = grade;
    }

    int grade(const std::string& query_id, const std::string& document_id) const
    {
        auto q = m_grades.find(query_id);
        if (q == m_grades.end()) {
            return 0;
        }
        auto d = q->second.find(document_id);
        return d == q->second.end() ? 0 : d->second;
    }

    bool contains(const std::string& query_id, const std::string& document_id) const
    {
        auto q = m_grades.find(query_id);
        return q != m_grades.end() && q->second.count(document_id) > 0;
    }

    /// Grades for one query; empty map when the query is unjudged.
    const std::map<std::string, int>& for_query(const std::string& query_id) const
    {
        static const std::map<std::string, int> empty;
        auto q = m_grades.find(query_id);
        return q == m_grades.end() ? empty : q->second;
    }

    const std::map<std::string, std::map<std::string, int>>& all() const noexcept { return m_grades; }

  private:
    std::map<std::string, std::map<std::string, int>> m_grades;
};

} // namespace parade
