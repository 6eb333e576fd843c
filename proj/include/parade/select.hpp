#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "parade/backend.hpp"
#include "parade/core.hpp"
#include "parade/ingest.hpp"
#include "parade/parallel.hpp"
#include "parade/prompt.hpp"
#include "parade/random.hpp"

namespace parade {

enum class Strategy { random, sbs, dbs_dql, dbs_cdql };

inline std::string to_string(Strategy s)
{
    switch (s) {
    case Strategy::random: return "random";
    case Strategy::sbs: return "sbs";
    case Strategy::dbs_dql: return "dbs_dql";
    case Strategy::dbs_cdql: return "dbs_cdql";
    }
    return "unknown";
}

inline Strategy parse_strategy(std::string_view s)
{
    if (s == "random") return Strategy::random;
    if (s == "sbs") return Strategy::sbs;
    if (s == "dbs_dql" || s == "dbs") return Strategy::dbs_dql;
    if (s == "dbs_cdql" || s == "cdql") return Strategy::dbs_cdql;
    throw ConfigError("unknown selection strategy '" + std::string(s) + "'");
}

struct DemoPool {
    std::vector<Demonstration> demos;
    std::string origin;

    std::size_t size() const noexcept { return demos.size(); }
};

enum class SkipReason { bad_label, duplicate };

inline std::string to_string(SkipReason r) { return r == SkipReason::bad_label ? "bad_label" : "duplicate"; }

struct ShortlistEntry {
    Demonstration demo;
    std::optional<double> score; // DQL or similarity; absent for random sampling
};

struct FilteredOut {
    int rank = 0;
    SkipReason reason = SkipReason::bad_label;
};

/// Audit trail of one selection run: the ranked shortlist, what filtering
/// skipped and why, and the final ordered demonstration set.
struct SelectionReport {
    Strategy strategy = Strategy::random;
    std::vector<ShortlistEntry> shortlist;
    std::vector<FilteredOut> filtered_out;
    std::vector<Demonstration> selected;
    std::optional<std::uint64_t> seed;
    std::optional<double> objective; // CDQL of the selected sequence
    std::vector<std::string> warnings;

    std::vector<int> ranks_of_selected() const
    {
        std::vector<int> ranks;
        for (const auto& d : selected) {
            ranks.push_back(d.source_rank.value_or(0));
        }
        return ranks;
    }

    std::size_t skipped() const noexcept { return filtered_out.size(); }
};

enum class Verdict { accept, reject };

/// Human-edited verdicts keyed by 1-based shortlist rank. Unlisted ranks accept.
struct FilterFile {
    std::map<int, Verdict> verdicts;
    std::map<int, std::string> notes;

    Verdict verdict(int rank) const
    {
        auto it = verdicts.find(rank);
        return it == verdicts.end() ? Verdict::accept : it->second;
    }
};

/// `rank<TAB>accept|reject<TAB>optional-note`; '#' starts a comment line.
inline FilterFile read_filter_file(std::istream& in)
{
    FilterFile filter;
    std::string line;
    std::size_t lineno = 0;
    while (detail::next_line(in, line)) {
        ++lineno;
        auto body = trim(line);
        if (body.empty() || body.front() == '#') {
            continue;
        }
        auto fields = detail::split_tabs(line);
        if (fields.size() < 2 || fields.size() > 3) {
            throw InputError("expected rank<TAB>accept|reject[<TAB>note]", lineno);
        }
        int rank = 0;
        if (!detail::parse_int(trim(fields[0]), rank) || rank < 1) {
            throw InputError("invalid shortlist rank '" + std::string(fields[0]) + "'", lineno);
        }
        auto word = trim(fields[1]);
        if (word == "accept") {
            filter.verdicts[rank] = Verdict::accept;
        } else if (word == "reject") {
            filter.verdicts[rank] = Verdict::reject;
        } else {
            throw InputError("verdict must be accept or reject", lineno);
        }
        if (fields.size() == 3) {
            filter.notes[rank] = std::string(fields[2]);
        }
    }
    return filter;
}

inline FilterFile read_filter_file(const std::string& path)
{
    auto in = detail::open_input(path);
    return read_filter_file(in);
}

class SelectionError : public Error {
  public:
    using Error::Error;
};

/// Uniform sample without replacement (SplitMix64 + Fisher-Yates) that skips
/// repeated query texts.
inline SelectionReport random_select(const DemoPool& pool, std::size_t k, std::uint64_t seed)
{
    if (k > pool.size()) {
        throw SelectionError("cannot sample " + std::to_string(k) + " demonstrations from a pool of " +
                             std::to_string(pool.size()));
    }
    SelectionReport report;
    report.strategy = Strategy::random;
    report.seed = seed;
    auto order = sample_indices(pool.size(), pool.size(), seed);
    std::unordered_set<std::string> texts;
    int rank = 0;
    for (std::size_t idx : order) {
        if (report.selected.size() == k) {
            break;
        }
        Demonstration d = pool.demos[idx];
        d.source_rank = ++rank;
        report.shortlist.push_back({d, std::nullopt});
        if (!texts.insert(d.query.text).second) {
            report.filtered_out.push_back({rank, SkipReason::duplicate});
            continue;
        }
        report.selected.push_back(std::move(d));
    }
    if (report.selected.size() < k) {
        throw SelectionError("only " + std::to_string(report.selected.size()) +
                             " distinct queries available for k=" + std::to_string(k));
    }
    return report;
}

/// Orders the pool by cosine(embed(demo query), embed(test query)) and keeps
/// the first k distinct query texts.
inline SelectionReport sbs_select(const DemoPool& pool, const Query& test_query, std::size_t k, Backend& embedder)
{
    if (k > pool.size()) {
        throw SelectionError("k=" + std::to_string(k) + " exceeds pool size " + std::to_string(pool.size()));
    }
    SelectionReport report;
    report.strategy = Strategy::sbs;
    const auto target = embedder.embed(test_query.text);
    const bool target_zero = l2_norm(target) == 0.0;
    if (target_zero) {
        report.warnings.push_back("test query '" + test_query.id + "' embeds to the zero vector");
    }
    auto vectors = parallel_map(pool.size(), embedder.max_inflight(),
                                [&](std::size_t i) { return embedder.embed(pool.demos[i].query.text); });
    std::vector<std::pair<double, std::size_t>> sims;
    sims.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (!target_zero && l2_norm(vectors[i]) == 0.0) {
            report.warnings.push_back("demonstration '" + pool.demos[i].id() +
                                      "' embeds to the zero vector; similarity set to 0");
        }
        sims.emplace_back(cosine(vectors[i], target), i);
    }
    std::stable_sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::unordered_set<std::string> texts;
    int rank = 0;
    for (const auto& [sim, idx] : sims) {
        Demonstration d = pool.demos[idx];
        d.source_rank = ++rank;
        report.shortlist.push_back({d, sim});
        if (report.selected.size() == k) {
            continue;
        }
        if (!texts.insert(d.query.text).second) {
            report.filtered_out.push_back({rank, SkipReason::duplicate});
            continue;
        }
        report.selected.push_back(std::move(d));
    }
    return report;
}

inline double mean_logprob(const TokenLogProbs& lp, const std::string& what)
{
    lp.validate();
    if (lp.empty()) {
        throw Error(what + ": query produced no tokens");
    }
    return lp.sum() / static_cast<double>(lp.size());
}

/// Demonstration query likelihood: mean per-token log-probability of the
/// demonstration's query given its own document, rendered as the first pair of
/// a prompt. Lower means harder.
inline double dql(Backend& backend, const PromptTemplate& tmpl, const Demonstration& demo,
                  PromptOptions options = {})
{
    if (trim(demo.query.text).empty()) {
        throw Error("dql: demonstration query is empty");
    }
    auto bundle = assemble_prompt(tmpl, {}, demo.document, demo.query, options);
    return mean_logprob(backend.score_continuation(bundle.context, bundle.continuation),
                        "dql(" + demo.id() + ")");
}

/// Shortlist of the m lowest-DQL demonstrations from precomputed scores,
/// ascending, ties by pool index.
inline SelectionReport dbs_shortlist(const DemoPool& pool, std::span<const double> dql_scores, std::size_t m)
{
    if (dql_scores.size() != pool.size()) {
        throw Error("dbs_shortlist: one DQL value per pool member is required");
    }
    if (m > pool.size()) {
        throw SelectionError("shortlist size " + std::to_string(m) + " exceeds pool size " +
                             std::to_string(pool.size()));
    }
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dql_scores[a] < dql_scores[b]; });
    SelectionReport report;
    report.strategy = Strategy::dbs_dql;
    for (std::size_t r = 0; r < m; ++r) {
        Demonstration d = pool.demos[order[r]];
        d.source_rank = static_cast<int>(r + 1);
        report.shortlist.push_back({std::move(d), dql_scores[order[r]]});
    }
    return report;
}

inline std::vector<double> score_pool_dql(Backend& backend, const PromptTemplate& tmpl, const DemoPool& pool,
                                          PromptOptions options = {})
{
    return parallel_map(pool.size(), backend.max_inflight(),
                        [&](std::size_t i) { return dql(backend, tmpl, pool.demos[i], options); });
}

inline SelectionReport dbs_shortlist(Backend& backend, const PromptTemplate& tmpl, const DemoPool& pool,
                                     std::size_t m = 30, PromptOptions options = {})
{
    if (m > pool.size()) {
        throw SelectionError("shortlist size " + std::to_string(m) + " exceeds pool size " +
                             std::to_string(pool.size()));
    }
    auto scores = score_pool_dql(backend, tmpl, pool, options);
    return dbs_shortlist(pool, scores, m);
}

/// Walks the shortlist in rank order, skipping rejected ranks (bad_label) and
/// repeated query texts (duplicate), until k demonstrations are accepted.
/// With k = nullopt every survivor is kept.
inline SelectionReport apply_filter(const SelectionReport& report, const FilterFile& filter,
                                    std::optional<std::size_t> k)
{
    const int n = static_cast<int>(report.shortlist.size());
    for (const auto& [rank, verdict] : filter.verdicts) {
        if (rank < 1 || rank > n) {
            throw SelectionError("filter rank " + std::to_string(rank) + " is outside the shortlist (1.." +
                                 std::to_string(n) + ")");
        }
    }
    SelectionReport out = report;
    out.filtered_out.clear();
    out.selected.clear();
    out.objective.reset();
    std::unordered_set<std::string> texts;
    for (int rank = 1; rank <= n; ++rank) {
        if (k && out.selected.size() == *k) {
            break;
        }
        auto& entry = out.shortlist[static_cast<std::size_t>(rank - 1)];
        entry.demo.source_rank = rank;
        if (filter.verdict(rank) == Verdict::reject) {
            entry.demo.label_ok = false;
            out.filtered_out.push_back({rank, SkipReason::bad_label});
            continue;
        }
        entry.demo.label_ok = true;
        if (!texts.insert(entry.demo.query.text).second) {
            out.filtered_out.push_back({rank, SkipReason::duplicate});
            continue;
        }
        out.selected.push_back(entry.demo);
    }
    if (k && out.selected.size() < *k) {
        throw SelectionError("only " + std::to_string(out.selected.size()) + " survived filtering, " +
                             std::to_string(*k) + " requested");
    }
    return out;
}

/// Mean query logprob of `demo` when it follows `prefix` in the prompt.
inline double conditional_term(Backend& backend, const PromptTemplate& tmpl, std::span<const Demonstration> prefix,
                               const Demonstration& demo, PromptOptions options = {})
{
    auto bundle = assemble_prompt(tmpl, prefix, demo.document, demo.query, options);
    return mean_logprob(backend.score_continuation(bundle.context, bundle.continuation),
                        "cdql(" + demo.id() + ")");
}

/// Conditional DQL of an ordered sequence: the sum over positions of each
/// demonstration's mean query logprob given all earlier demonstrations.
inline double cdql(Backend& backend, const PromptTemplate& tmpl, std::span<const Demonstration> seq,
                   PromptOptions options = {})
{
    if (seq.empty()) {
        throw Error("cdql: empty sequence");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        total += conditional_term(backend, tmpl, seq.first(i), seq[i], options);
    }
    return total;
}

enum class CdqlMode { exact, greedy };

inline CdqlMode parse_cdql_mode(std::string_view s)
{
    if (s == "exact") return CdqlMode::exact;
    if (s == "greedy") return CdqlMode::greedy;
    throw ConfigError("cdql mode must be exact or greedy");
}

class BudgetExceeded : public SelectionError {
  public:
    using SelectionError::SelectionError;
};

/// n! / (n-k)!, saturating at UINT64_MAX.
inline std::uint64_t ordered_subset_count(std::size_t n, std::size_t k)
{
    if (k > n) {
        return 0;
    }
    std::uint64_t count = 1;
    for (std::size_t i = 0; i < k; ++i) {
        auto f = static_cast<std::uint64_t>(n - i);
        if (count > std::numeric_limits<std::uint64_t>::max() / f) {
            return std::numeric_limits<std::uint64_t>::max();
        }
        count *= f;
    }
    return count;
}

struct CdqlOptions {
    CdqlMode mode = CdqlMode::exact;
    std::uint64_t budget = 1'000'000;
    PromptOptions prompt;
};

namespace detail {

struct CdqlBest {
    double value = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> indices;
};

// Depth-first over ordered subsets in lexicographic index order. Prefix sums
// are shared by every extension, and the strict comparison keeps the
// lexicographically smallest tuple among equal values.
inline void cdql_search(Backend& backend, const PromptTemplate& tmpl, const std::vector<Demonstration>& pool,
                        std::size_t depth_goal, std::vector<std::size_t>& path, std::vector<Demonstration>& prefix,
                        std::vector<bool>& used, double running, CdqlBest& best, const PromptOptions& options)
{
    if (path.size() == depth_goal) {
        if (running < best.value) {
            best.value = running;
            best.indices = path;
        }
        return;
    }
    for (std::size_t j = 0; j < pool.size(); ++j) {
        if (used[j]) {
            continue;
        }
        double term = conditional_term(backend, tmpl, prefix, pool[j], options);
        used[j] = true;
        path.push_back(j);
        prefix.push_back(pool[j]);
        cdql_search(backend, tmpl, pool, depth_goal, path, prefix, used, running + term, best, options);
        prefix.pop_back();
        path.pop_back();
        used[j] = false;
    }
}

} // namespace detail

/// Picks an ordered K-sequence from the filtered survivors (`report.selected`)
/// minimizing CDQL. Exact mode enumerates every ordered K-subset and refuses
/// when their count exceeds the budget; greedy mode extends the sequence one
/// position at a time with the survivor that lowers the running CDQL most.
inline SelectionReport cdql_select(Backend& backend, const PromptTemplate& tmpl, const SelectionReport& filtered,
                                   std::size_t K, const CdqlOptions& options = {})
{
    const auto& survivors = filtered.selected;
    if (K == 0) {
        throw SelectionError("cdql_select: K must be >= 1");
    }
    if (survivors.size() < K) {
        throw SelectionError("only " + std::to_string(survivors.size()) + " survivors for K=" + std::to_string(K));
    }
    SelectionReport out = filtered;
    out.strategy = Strategy::dbs_cdql;
    std::vector<std::size_t> chosen;
    double value = 0.0;

    if (options.mode == CdqlMode::exact) {
        auto count = ordered_subset_count(survivors.size(), K);
        if (count > options.budget) {
            throw BudgetExceeded("exact CDQL search needs " + std::to_string(count) + " sequences for " +
                                 std::to_string(survivors.size()) + " survivors and K=" + std::to_string(K) +
                                 ", over the budget of " + std::to_string(options.budget) +
                                 "; use greedy mode or a smaller shortlist");
        }
        // Each first element is an independent subtree; reduce in index order.
        auto partial = parallel_map(survivors.size(), backend.max_inflight(), [&](std::size_t first) {
            detail::CdqlBest best;
            std::vector<bool> used(survivors.size(), false);
            used[first] = true;
            std::vector<std::size_t> path{first};
            std::vector<Demonstration> prefix{survivors[first]};
            double head = conditional_term(backend, tmpl, {}, survivors[first], options.prompt);
            detail::cdql_search(backend, tmpl, survivors, K, path, prefix, used, head, best, options.prompt);
            return best;
        });
        detail::CdqlBest best;
        for (auto& p : partial) {
            if (p.value < best.value) {
                best = std::move(p);
            }
        }
        chosen = std::move(best.indices);
        value = best.value;
    } else {
        std::vector<bool> used(survivors.size(), false);
        std::vector<Demonstration> prefix;
        for (std::size_t pos = 0; pos < K; ++pos) {
            double best_term = std::numeric_limits<double>::infinity();
            std::size_t best_j = 0;
            for (std::size_t j = 0; j < survivors.size(); ++j) {
                if (used[j]) {
                    continue;
                }
                double term = conditional_term(backend, tmpl, prefix, survivors[j], options.prompt);
                if (term < best_term) {
                    best_term = term;
                    best_j = j;
                }
            }
            used[best_j] = true;
            chosen.push_back(best_j);
            prefix.push_back(survivors[best_j]);
            value += best_term;
        }
    }

    out.selected.clear();
    for (std::size_t j : chosen) {
        out.selected.push_back(survivors[j]);
    }
    out.objective = value;
    return out;
}

enum class BinSide { bottom, top };

/// Uniform sample of n demonstrations from the lowest (bottom) or highest (top)
/// `percentile` fraction of the pool by DQL.
inline std::vector<Demonstration> dql_percentile_bins(std::span<const std::pair<Demonstration, double>> pool_scores,
                                                      double percentile, BinSide side, std::size_t n,
                                                      std::uint64_t seed)
{
    if (!(percentile > 0.0 && percentile <= 1.0)) {
        throw SelectionError("percentile must lie in (0, 1]");
    }
    std::vector<std::size_t> order(pool_scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pool_scores[a].second < pool_scores[b].second; });
    // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
    auto slice = static_cast<std::size_t>(
        std::floor(percentile * static_cast<double>(pool_scores.size()) + 1e-9));
    if (slice == 0) {
        throw SelectionError("percentile slice is empty");
    }
    if (n > slice) {
        throw SelectionError("cannot sample " + std::to_string(n) + " from a slice of " + std::to_string(slice));
    }
    std::vector<std::size_t> members;
    if (side == BinSide::bottom) {
        members.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(slice));
    } else {
        members.assign(order.end() - static_cast<std::ptrdiff_t>(slice), order.end());
    }
    std::vector<Demonstration> out;
    for (std::size_t i : sample_indices(members.size(), n, seed)) {
        out.push_back(pool_scores[members[i]].first);
    }
    return out;
}

// JSON and JSONL encodings.

inline nlohmann::json demo_to_json(const Demonstration& d)
{
    nlohmann::json j{{"query_id", d.query.id}, {"query", d.query.text}, {"doc_id", d.document.id},
                     {"text", d.document.text}};
    if (!d.document.title.empty()) {
        j["title"] = d.document.title;
    }
    if (d.source_rank) {
        j["source_rank"] = *d.source_rank;
    }
    if (d.label_ok) {
        j["label_ok"] = *d.label_ok;
    }
    return j;
}

inline Demonstration demo_from_json(const nlohmann::json& j)
{
    try {
        Demonstration d{Query(j.at("query_id").get<std::string>(), j.at("query").get<std::string>()),
                        Document(j.at("doc_id").get<std::string>(), j.at("text").get<std::string>(),
                                 j.value("title", std::string{})),
                        std::nullopt, std::nullopt};
        if (j.contains("source_rank")) {
            d.source_rank = j["source_rank"].get<int>();
        }
        if (j.contains("label_ok")) {
            d.label_ok = j["label_ok"].get<bool>();
        }
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed demonstration: ") + e.what());
    }
}

/// Pool JSONL: {"query_id", "query", "doc_id", "text", "title"?} per line.
inline DemoPool read_demo_pool(std::istream& in, std::string origin = {})
{
    DemoPool pool{{}, std::move(origin)};
    std::string line;
    std::size_t lineno = 0;
    while (detail::next_line(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        try {
            pool.demos.push_back(demo_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw InputError(std::string("malformed JSON: ") + e.what(), lineno);
        } catch (const InputError& e) {
            throw InputError(e.what(), lineno);
        }
    }
    return pool;
}

inline DemoPool read_demo_pool(const std::string& path)
{
    auto in = detail::open_input(path);
    return read_demo_pool(in, path);
}

inline nlohmann::json to_json(const SelectionReport& r)
{
    nlohmann::json shortlist = nlohmann::json::array();
    for (std::size_t i = 0; i < r.shortlist.size(); ++i) {
        auto j = demo_to_json(r.shortlist[i].demo);
        j["rank"] = static_cast<int>(i + 1);
        j["score"] = r.shortlist[i].score ? nlohmann::json(*r.shortlist[i].score) : nlohmann::json(nullptr);
        shortlist.push_back(std::move(j));
    }
    nlohmann::json filtered = nlohmann::json::array();
    for (const auto& f : r.filtered_out) {
        filtered.push_back({{"rank", f.rank}, {"reason", to_string(f.reason)}});
    }
    nlohmann::json selected = nlohmann::json::array();
    for (const auto& d : r.selected) {
        selected.push_back(demo_to_json(d));
    }
    nlohmann::json j{{"strategy", to_string(r.strategy)},
                     {"shortlist", std::move(shortlist)},
                     {"filtered_out", std::move(filtered)},
                     {"selected", std::move(selected)},
                     {"ranks_of_selected", r.ranks_of_selected()},
                     {"skipped", r.skipped()},
                     {"seed", r.seed ? nlohmann::json(*r.seed) : nlohmann::json(nullptr)},
                     {"warnings", r.warnings}};
    if (r.objective) {
        j["cdql"] = *r.objective;
    }
    return j;
}

inline SelectionReport selection_from_json(const nlohmann::json& j)
{
    try {
        SelectionReport r;
        r.strategy = parse_strategy(j.at("strategy").get<std::string>());
        for (const auto& e : j.at("shortlist")) {
            std::optional<double> score;
            if (e.contains("score") && !e["score"].is_null()) {
                score = e["score"].get<double>();
            }
            r.shortlist.push_back({demo_from_json(e), score});
        }
        for (const auto& f : j.value("filtered_out", nlohmann::json::array())) {
            r.filtered_out.push_back({f.at("rank").get<int>(), f.at("reason").get<std::string>() == "duplicate"
                                                                   ? SkipReason::duplicate
                                                                   : SkipReason::bad_label});
        }
        for (const auto& d : j.at("selected")) {
            r.selected.push_back(demo_from_json(d));
        }
        if (j.contains("seed") && !j["seed"].is_null()) {
            r.seed = j["seed"].get<std::uint64_t>();
        }
        if (j.contains("cdql")) {
            r.objective = j["cdql"].get<double>();
        }
        r.warnings = j.value("warnings", std::vector<std::string>{});
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed selection report: ") + e.what());
    }
}

} // namespace parade
