#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "parade/core.hpp"
#include "parade/text.hpp"

namespace parade {

enum class CorpusFormat { jsonl, tsv };

struct BM25Params {
    double k1 = 0.9;
    double b = 0.4;
    int top_k = 100;

    void validate() const
    {
        if (!(k1 > 0.0)) {
            throw ConfigError("bm25 k1 must be > 0");
        }
        if (!(b >= 0.0 && b <= 1.0)) {
            throw ConfigError("bm25 b must lie in [0, 1]");
        }
        if (top_k < 1) {
            throw ConfigError("bm25 top_k must be >= 1");
        }
    }
};

/// Documents plus the in-memory statistics BM25 needs. Read-only once built.
class Corpus {
  public:
    struct Posting {
        std::size_t doc;
        int tf;
    };

    Corpus() = default;

    void add(Document doc)
    {
        if (m_index.count(doc.id)) {
            throw InputError("duplicate document id '" + doc.id + "'");
        }
        std::string indexed = doc.title.empty() ? doc.text : doc.title + " " + doc.text;
        auto tokens = tokenize(indexed);
        std::map<std::string, int> tf;
        for (auto& t : tokens) {
            ++tf[t];
        }
        std::size_t slot = m_docs.size();
        for (auto& [term, count] : tf) {
            m_postings[term].push_back({slot, count});
        }
        m_total_length += tokens.size();
        m_lengths.push_back(tokens.size());
        m_index.emplace(doc.id, slot);
        m_docs.push_back(std::move(doc));
    }

    std::size_t size() const noexcept { return m_docs.size(); }
    bool empty() const noexcept { return m_docs.empty(); }

    double avg_doc_length() const noexcept
    {
        return m_docs.empty() ? 0.0
                              : static_cast<double>(m_total_length) / static_cast<double>(m_docs.size());
    }

    std::size_t doc_length(std::size_t slot) const { return m_lengths.at(slot); }

    std::size_t doc_length(const std::string& id) const { return m_lengths.at(m_index.at(id)); }

    std::size_t document_frequency(const std::string& term) const
    {
        auto it = m_postings.find(term);
        return it == m_postings.end() ? 0 : it->second.size();
    }

    const std::vector<Posting>* postings(const std::string& term) const
    {
        auto it = m_postings.find(term);
        return it == m_postings.end() ? nullptr : &it->second;
    }

    const Document* find(const std::string& id) const
    {
        auto it = m_index.find(id);
        return it == m_index.end() ? nullptr : &m_docs[it->second];
    }

    const Document& at(const std::string& id) const
    {
        if (const auto* d = find(id)) {
            return *d;
        }
        throw Error("unknown document id '" + id + "'");
    }

    const std::vector<Document>& documents() const noexcept { return m_docs; }

    std::size_t vocabulary_size() const noexcept { return m_postings.size(); }

  private:
    std::vector<Document> m_docs;
    std::vector<std::size_t> m_lengths;
    std::unordered_map<std::string, std::size_t> m_index;
    std::unordered_map<std::string, std::vector<Posting>> m_postings;
    std::size_t m_total_length = 0;
};

namespace detail {

inline std::ifstream open_input(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open '" + path + "'");
    }
    return in;
}

inline bool next_line(std::istream& in, std::string& line)
{
    if (!std::getline(in, line)) {
        return false;
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    return true;
}

inline std::vector<std::string_view> split_tabs(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline bool parse_double(std::string_view s, double& out)
{
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

inline bool parse_int(std::string_view s, int& out)
{
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

} // namespace detail

inline Corpus read_corpus(std::istream& in, CorpusFormat format)
{
    Corpus corpus;
    std::string line;
    std::size_t lineno = 0;
    while (detail::next_line(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        std::string id, title, text;
        if (format == CorpusFormat::jsonl) {
            nlohmann::json rec;
            try {
                rec = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw InputError(std::string("malformed JSON record: ") + e.what(), lineno);
            }
            if (!rec.is_object() || !rec.contains("_id") || !rec["_id"].is_string()) {
                throw InputError("record lacks a string \"_id\"", lineno);
            }
            if (!rec.contains("text") || !rec["text"].is_string()) {
                throw InputError("record lacks a string \"text\"", lineno);
            }
            id = rec["_id"].get<std::string>();
            text = rec["text"].get<std::string>();
            if (rec.contains("title") && rec["title"].is_string()) {
                title = rec["title"].get<std::string>();
            }
        } else {
            auto fields = detail::split_tabs(line);
            if (fields.size() == 2) {
                id = fields[0];
                text = fields[1];
            } else if (fields.size() == 3) {
                id = fields[0];
                title = fields[1];
                text = fields[2];
            } else {
                throw InputError("expected 2 or 3 tab-separated fields", lineno);
            }
        }
        if (id.empty() || text.empty()) {
            throw InputError("record has empty id or text", lineno);
        }
        if (corpus.find(id)) {
            throw InputError("duplicate document id '" + id + "'", lineno);
        }
        corpus.add(Document(std::move(id), std::move(text), std::move(title)));
    }
    return corpus;
}

inline Corpus read_corpus(const std::string& path, CorpusFormat format)
{
    auto in = detail::open_input(path);
    return read_corpus(in, format);
}

/// Queries TSV: `qid<TAB>text`, file order preserved.
inline std::vector<Query> read_queries(std::istream& in)
{
    std::vector<Query> queries;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (detail::next_line(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw InputError("expected qid<TAB>text", lineno);
        }
        std::string id = line.substr(0, tab);
        std::string text = line.substr(tab + 1);
        if (id.empty() || trim(text).empty()) {
            throw InputError("query has empty id or text", lineno);
        }
        if (!seen.insert(id).second) {
            throw InputError("duplicate query id '" + id + "'", lineno);
        }
        queries.emplace_back(std::move(id), std::move(text));
    }
    return queries;
}

inline std::vector<Query> read_queries(const std::string& path)
{
    auto in = detail::open_input(path);
    return read_queries(in);
}

/// TREC run: `qid Q0 docid rank score tag`. Each query is re-sorted by
/// (score desc, docid asc); the rank column is kept only as `stated_rank`.
inline std::map<std::string, RankedList> read_trec_run(std::istream& in)
{
    std::map<std::string, std::vector<ScoredCandidate>> grouped;
    std::string line;
    std::size_t lineno = 0;
    while (detail::next_line(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        auto fields = split_whitespace(line);
        if (fields.size() != 6) {
            throw InputError("expected 6 fields, found " + std::to_string(fields.size()), lineno);
        }
        double score = 0.0;
        if (!detail::parse_double(fields[4], score) || !std::isfinite(score)) {
            throw InputError("non-numeric score '" + std::string(fields[4]) + "'", lineno);
        }
        int rank = 0;
        std::optional<int> stated;
        if (detail::parse_int(fields[3], rank)) {
            stated = rank;
        }
        grouped[std::string(fields[0])].push_back(
            {std::string(fields[2]), score, Provenance::first_stage, stated});
    }
    std::map<std::string, RankedList> runs;
    for (auto& [qid, candidates] : grouped) {
        try {
            runs.emplace(qid, make_ranked_list(qid, std::move(candidates)));
        } catch (const Error& e) {
            throw InputError(e.what());
        }
    }
    return runs;
}

inline std::map<std::string, RankedList> read_trec_run(const std::string& path)
{
    auto in = detail::open_input(path);
    return read_trec_run(in);
}

inline std::string format_score(double score)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", score);
    return buf;
}

inline void write_trec_run(std::ostream& out, const RankedList& list, const std::string& tag)
{
    for (const auto& e : list.entries) {
        out << list.query_id << " Q0 " << e.candidate.document_id << ' ' << e.rank << ' '
            << format_score(e.candidate.score) << ' ' << tag << '\n';
    }
}

inline void write_trec_run(std::ostream& out, const std::vector<RankedList>& lists,
                           const std::string& tag)
{
    for (const auto& list : lists) {
        write_trec_run(out, list, tag);
    }
}

/// TREC qrels: `qid iter docid grade`. Repeated pairs keep the last grade.
inline Judgments read_qrels(std::istream& in, std::vector<std::string>* warnings = nullptr)
{
    Judgments judgments;
    std::string line;
    std::size_t lineno = 0;
    while (detail::next_line(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        auto fields = split_whitespace(line);
        if (fields.size() != 4) {
            throw InputError("expected 4 fields, found " + std::to_string(fields.size()), lineno);
        }
        int grade = 0;
        if (!detail::parse_int(fields[3], grade)) {
            throw InputError("non-integer grade '" + std::string(fields[3]) + "'", lineno);
        }
        if (grade < 0) {
            throw InputError("negative grade", lineno);
        }
        std::string qid(fields[0]), did(fields[2]);
        if (judgments.contains(qid, did) && warnings) {
            warnings->push_back("line " + std::to_string(lineno) + ": repeated judgment for (" +
                                qid + ", " + did + "), keeping the last value");
        }
        judgments.set(qid, did, grade);
    }
    return judgments;
}

inline Judgments read_qrels(const std::string& path, std::vector<std::string>* warnings = nullptr)
{
    auto in = detail::open_input(path);
    return read_qrels(in, warnings);
}

inline double bm25_idf(std::size_t num_docs, std::size_t df)
{
    auto n = static_cast<double>(num_docs);
    auto f = static_cast<double>(df);
    return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

/// Okapi BM25 over the distinct query terms. Documents scoring 0 are dropped
/// and the list is cut at top_k.
inline RankedList bm25_retrieve(const Corpus& corpus, const Query& query, const BM25Params& params = {})
{
    params.validate();
    if (corpus.empty()) {
        return RankedList{query.id, {}};
    }
    auto terms = tokenize(query.text);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

    const double avgdl = corpus.avg_doc_length();
    std::unordered_map<std::size_t, double> acc;
    for (const auto& term : terms) {
        const auto* plist = corpus.postings(term);
        if (!plist) {
            continue;
        }
        const double idf = bm25_idf(corpus.size(), plist->size());
        for (const auto& p : *plist) {
            const double tf = p.tf;
            const double norm = 1.0 - params.b + params.b * static_cast<double>(corpus.doc_length(p.doc)) / avgdl;
            acc[p.doc] += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
        }
    }
    std::vector<ScoredCandidate> scored;
    scored.reserve(acc.size());
    for (auto& [slot, score] : acc) {
        if (score > 0.0) {
            scored.push_back({corpus.documents()[slot].id, score, Provenance::first_stage, {}});
        }
    }
    auto list = make_ranked_list(query.id, std::move(scored));
    if (list.entries.size() > static_cast<std::size_t>(params.top_k)) {
        list.entries.resize(static_cast<std::size_t>(params.top_k));
    }
    return list;
}

} // namespace parade
