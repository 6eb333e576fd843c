#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "parade/parade.hpp"

// Experiment commands behind the `parade` executable. Each command reads one
// JSON run config (already merged with flag overrides) and returns the
// process exit code: 0 success, 1 runtime failure, 2 configuration error.

namespace parade::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;
inline constexpr const char* kVersion = "0.1.0";

class RunConfig {
  public:
    RunConfig(json raw, fs::path base_dir) : m_raw(std::move(raw)), m_base(std::move(base_dir))
    {
        if (!m_raw.is_object()) {
            throw ConfigError("run config must be a JSON object");
        }
    }

    const json& raw() const noexcept { return m_raw; }

    /// Value at a '/'-separated key path, or nullptr json when absent.
    json get(const std::string& key) const
    {
        const json* node = &m_raw;
        std::stringstream ss(key);
        std::string part;
        while (std::getline(ss, part, '/')) {
            if (!node->is_object() || !node->contains(part)) {
                return nullptr;
            }
            node = &(*node)[part];
        }
        return *node;
    }

    bool has(const std::string& key) const { return !get(key).is_null(); }

    template <typename T>
    T value(const std::string& key, T fallback) const
    {
        auto v = get(key);
        if (v.is_null()) {
            return fallback;
        }
        try {
            return v.get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + key + "' has the wrong type");
        }
    }

    fs::path resolve(const std::string& p) const
    {
        fs::path path(p);
        return path.is_absolute() ? path : m_base / path;
    }

    std::optional<fs::path> path(const std::string& key) const
    {
        auto v = get(key);
        if (v.is_null()) {
            return std::nullopt;
        }
        if (!v.is_string()) {
            throw ConfigError("config key '" + key + "' must be a path string");
        }
        return resolve(v.get<std::string>());
    }

    /// An input file that must exist.
    fs::path require_file(const std::string& key) const
    {
        auto p = path(key);
        if (!p) {
            throw ConfigError("config key '" + key + "' is required");
        }
        if (!fs::is_regular_file(*p)) {
            throw ConfigError("'" + key + "' path does not exist: " + p->string());
        }
        return *p;
    }

    std::optional<fs::path> optional_file(const std::string& key) const
    {
        auto p = path(key);
        if (p && !fs::exists(*p)) {
            throw ConfigError("'" + key + "' path does not exist: " + p->string());
        }
        return p;
    }

    fs::path output_dir() const
    {
        auto dir = path("output_dir").value_or(m_base / "out");
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec || !fs::is_directory(dir)) {
            throw ConfigError("output directory is not writable: " + dir.string());
        }
        return dir;
    }

    std::uint64_t seed() const { return value<std::uint64_t>("seed", 0); }

    std::string hash() const { return hex64(fnv1a64(m_raw.dump())); }

  private:
    json m_raw;
    fs::path m_base;
};

inline RunConfig load_run_config(const fs::path& path, const json& overrides = json::object())
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config '" + path.string() + "'");
    }
    json raw;
    try {
        raw = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (!raw.is_object()) {
        throw ConfigError("run config must be a JSON object");
    }
    raw.merge_patch(overrides);
    return RunConfig(std::move(raw), fs::absolute(path).parent_path());
}

inline BackendConfig backend_config(const RunConfig& cfg)
{
    BackendConfig b;
    auto kind = cfg.value<std::string>("backend/kind", "stub");
    if (kind == "http") {
        b.kind = BackendKind::http;
    } else if (kind == "stub") {
        b.kind = BackendKind::stub;
    } else {
        throw ConfigError("backend kind must be http or stub");
    }
    if (cfg.has("backend/endpoint")) {
        b.endpoint = cfg.value<std::string>("backend/endpoint", "");
    }
    if (b.kind == BackendKind::http) {
        if (const char* env = std::getenv("PARADE_BACKEND_URL"); env && *env) {
            b.endpoint = env;
        }
    }
    b.timeout = std::chrono::milliseconds(cfg.value<long long>("backend/timeout_ms", 30000));
    b.max_inflight = cfg.value<int>("backend/max_inflight", b.kind == BackendKind::http ? 8 : 1);
    b.retries = cfg.value<int>("backend/retries", 3);
    b.backoff_base = std::chrono::milliseconds(cfg.value<long long>("backend/backoff_ms", 100));
    b.validate();
    return b;
}

inline PromptTemplate prompt_template(const RunConfig& cfg)
{
    auto spec = cfg.value<std::string>("template", "builtin:trec");
    constexpr std::string_view prefix = "builtin:";
    if (spec.rfind(prefix, 0) == 0) {
        return builtin_template(spec.substr(prefix.size()));
    }
    auto p = cfg.resolve(spec);
    if (!fs::is_regular_file(p)) {
        throw ConfigError("'template' path does not exist: " + p.string());
    }
    return load_template(p.string());
}

inline CorpusFormat corpus_format(const RunConfig& cfg, const fs::path& corpus)
{
    auto fmt = cfg.value<std::string>("corpus_format", corpus.extension() == ".tsv" ? "tsv" : "jsonl");
    if (fmt == "jsonl") return CorpusFormat::jsonl;
    if (fmt == "tsv") return CorpusFormat::tsv;
    throw ConfigError("corpus_format must be jsonl or tsv");
}

inline BM25Params bm25_params(const RunConfig& cfg)
{
    BM25Params p;
    p.k1 = cfg.value<double>("bm25/k1", p.k1);
    p.b = cfg.value<double>("bm25/b", p.b);
    p.top_k = cfg.value<int>("bm25/top_k", p.top_k);
    p.validate();
    return p;
}

inline std::string utc_timestamp()
{
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Attached to every output. `created_at` is the only field that varies
/// between identical runs.
inline json provenance(const RunConfig& cfg, const std::string& command, const std::string& backend_id)
{
    return {{"tool", "parade"},     {"version", kVersion},         {"command", command},
            {"config_hash", cfg.hash()}, {"seed", cfg.seed()}, {"backend_id", backend_id},
            {"created_at", utc_timestamp()}};
}

inline void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot write '" + path.string() + "'");
    }
    out << text;
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline fs::path output_file(const RunConfig& cfg, const std::string& default_name)
{
    if (auto out = cfg.path("out")) {
        std::error_code ec;
        if (out->has_parent_path()) {
            fs::create_directories(out->parent_path(), ec);
        }
        return *out;
    }
    return cfg.output_dir() / default_name;
}

/// Loads the first-stage candidates: a TREC run when configured, otherwise
/// BM25 over the corpus. Lists are cut to `depth`.
inline std::map<std::string, RankedList> first_stage(const RunConfig& cfg, const Corpus& corpus,
                                                     const std::vector<Query>& queries, int depth)
{
    std::map<std::string, RankedList> runs;
    if (auto run_path = cfg.optional_file("first_stage_run")) {
        runs = read_trec_run(run_path->string());
    } else {
        auto params = bm25_params(cfg);
        params.top_k = depth;
        for (const auto& q : queries) {
            runs.emplace(q.id, bm25_retrieve(corpus, q, params));
        }
    }
    for (auto& [qid, list] : runs) {
        if (list.entries.size() > static_cast<std::size_t>(depth)) {
            list.entries.resize(static_cast<std::size_t>(depth));
        }
    }
    return runs;
}

/// Demonstrations for prompting: a selection report (global `selected` or
/// SBS `per_query`), or a JSONL pool used verbatim in file order.
struct DemoSource {
    std::vector<Demonstration> global;
    std::map<std::string, std::vector<Demonstration>> per_query;
    bool is_per_query = false;

    const std::vector<Demonstration>& for_query(const std::string& qid) const
    {
        if (!is_per_query) {
            return global;
        }
        auto it = per_query.find(qid);
        if (it == per_query.end()) {
            throw ConfigError("demonstration file has no entry for query '" + qid + "'");
        }
        return it->second;
    }
};

inline DemoSource load_demos(const fs::path& path)
{
    DemoSource src;
    if (path.extension() == ".jsonl") {
        src.global = read_demo_pool(path.string()).demos;
        return src;
    }
    std::ifstream in(path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw InputError("demonstration file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (j.contains("per_query")) {
        src.is_per_query = true;
        for (const auto& [qid, report] : j["per_query"].items()) {
            src.per_query[qid] = selection_from_json(report).selected;
        }
    } else {
        src.global = selection_from_json(j).selected;
    }
    return src;
}

inline Aggregation aggregation(const RunConfig& cfg)
{
    auto a = cfg.value<std::string>("rerank/aggregation", "sum");
    if (a == "sum") return Aggregation::sum;
    if (a == "mean") return Aggregation::mean;
    throw ConfigError("rerank aggregation must be sum or mean");
}

// ---------------------------------------------------------------------------
// retrieve

inline int cmd_retrieve(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    auto corpus_path = cfg.require_file("corpus");
    auto queries_path = cfg.require_file("queries");
    auto params = bm25_params(cfg);
    auto target = output_file(cfg, "bm25.run");

    auto corpus = read_corpus(corpus_path.string(), corpus_format(cfg, corpus_path));
    auto queries = read_queries(queries_path.string());
    std::ostringstream run;
    std::size_t lines = 0;
    for (const auto& q : queries) {
        auto list = bm25_retrieve(corpus, q, params);
        lines += list.size();
        write_trec_run(run, list, cfg.value<std::string>("retrieve/tag", "bm25"));
    }
    write_text(target, run.str());
    json meta{{"provenance", provenance(cfg, "retrieve", "bm25")},
              {"bm25", {{"k1", params.k1}, {"b", params.b}, {"top_k", params.top_k}}},
              {"queries", queries.size()},
              {"lines", lines}};
    write_json(target.string() + ".meta.json", meta);
    out << "retrieve: " << queries.size() << " queries, " << lines << " lines -> " << target.string() << "\n";
    (void)err;
    return kExitOk;
}

// ---------------------------------------------------------------------------
// select

/// DQL values cached on disk, keyed by demonstration id, template hash,
/// backend id and instruction mode, so filter edits never trigger rescoring.
class DqlCache {
  public:
    explicit DqlCache(fs::path path) : m_path(std::move(path))
    {
        if (fs::exists(m_path)) {
            std::ifstream in(m_path);
            try {
                m_data = json::parse(in);
            } catch (const json::exception&) {
                m_data = json::object();
            }
        }
        if (!m_data.is_object()) {
            m_data = json::object();
        }
    }

    static std::string key(const Demonstration& d, const std::string& template_hash, const std::string& backend_id,
                           bool with_instruction)
    {
        return d.id() + "|" + template_hash + "|" + backend_id + "|" + (with_instruction ? "instr" : "noinstr");
    }

    std::optional<double> find(const std::string& k) const
    {
        auto it = m_data.find(k);
        if (it == m_data.end() || !it->is_number()) {
            return std::nullopt;
        }
        return it->get<double>();
    }

    void put(const std::string& k, double v) { m_data[k] = v; }

    void save() const { write_json(m_path, m_data); }

  private:
    fs::path m_path;
    json m_data = json::object();
};

inline std::vector<double> cached_pool_dql(const RunConfig& cfg, Backend& backend, const PromptTemplate& tmpl,
                                           const DemoPool& pool, PromptOptions options, std::size_t& computed)
{
    DqlCache cache(cfg.path("selection/dql_cache").value_or(cfg.output_dir() / "dql_cache.json"));
    const auto thash = tmpl.hash();
    std::vector<double> scores(pool.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        auto k = DqlCache::key(pool.demos[i], thash, backend.id(), options.include_instruction);
        if (auto v = cache.find(k)) {
            scores[i] = *v;
        } else {
            missing.push_back(i);
        }
    }
    auto fresh = parallel_map(missing.size(), backend.max_inflight(),
                              [&](std::size_t j) { return dql(backend, tmpl, pool.demos[missing[j]], options); });
    for (std::size_t j = 0; j < missing.size(); ++j) {
        scores[missing[j]] = fresh[j];
        cache.put(DqlCache::key(pool.demos[missing[j]], thash, backend.id(), options.include_instruction), fresh[j]);
    }
    computed = missing.size();
    if (!missing.empty()) {
        cache.save();
    }
    return scores;
}

inline int cmd_select(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    auto strategy = parse_strategy(cfg.value<std::string>("selection/strategy", "dbs_dql"));
    auto pool_path = cfg.require_file("selection/pool");
    auto k = cfg.value<std::size_t>("selection/k", 1);
    auto filter_path = cfg.optional_file("selection/filter");
    auto target = output_file(cfg, "selection.json");
    auto bcfg = backend_config(cfg);
    auto tmpl = prompt_template(cfg);
    PromptOptions options{cfg.value<bool>("selection/include_instruction", true)};
    CdqlOptions cdql_options{parse_cdql_mode(cfg.value<std::string>("selection/cdql_mode", "exact")),
                             cfg.value<std::uint64_t>("selection/cdql_budget", 1'000'000), options};
    std::optional<fs::path> queries_path;
    if (strategy == Strategy::sbs) {
        queries_path = cfg.require_file("queries");
    }

    auto pool = read_demo_pool(pool_path.string());
    auto backend = make_backend(bcfg);
    const auto seed = derive_seed(cfg.seed(), "select");
    json doc;

    switch (strategy) {
    case Strategy::random: {
        doc = to_json(random_select(pool, k, seed));
        break;
    }
    case Strategy::sbs: {
        json per_query = json::object();
        for (const auto& q : read_queries(queries_path->string())) {
            auto report = sbs_select(pool, q, k, *backend);
            for (const auto& w : report.warnings) {
                err << "warning: " << w << "\n";
            }
            per_query[q.id] = to_json(report);
        }
        doc = {{"strategy", "sbs"}, {"per_query", per_query}};
        break;
    }
    case Strategy::dbs_dql:
    case Strategy::dbs_cdql: {
        auto m = cfg.value<std::size_t>("selection/m", std::min<std::size_t>(30, pool.size()));
        std::size_t computed = 0;
        auto scores = cached_pool_dql(cfg, *backend, tmpl, pool, options, computed);
        err << "select: " << computed << " DQL values computed, " << pool.size() - computed << " from cache\n";
        auto shortlist = dbs_shortlist(pool, scores, m);
        FilterFile filter;
        if (filter_path) {
            filter = read_filter_file(filter_path->string());
        }
        SelectionReport report;
        if (strategy == Strategy::dbs_dql) {
            report = apply_filter(shortlist, filter, k);
        } else {
            report = cdql_select(*backend, tmpl, apply_filter(shortlist, filter, std::nullopt), k, cdql_options);
        }
        doc = to_json(report);
        doc["cdql_mode"] = strategy == Strategy::dbs_cdql
                               ? json(cdql_options.mode == CdqlMode::exact ? "exact" : "greedy")
                               : json(nullptr);
        doc["include_instruction"] = options.include_instruction;
        break;
    }
    }
    doc["pool"] = {{"origin", pool_path.filename().string()}, {"size", pool.size()}};
    doc["template_hash"] = tmpl.hash();
    doc["k"] = k;
    doc["provenance"] = provenance(cfg, "select", backend->id());
    write_json(target, doc);

    out << "select: strategy=" << to_string(strategy) << " -> " << target.string() << "\n";
    if (doc.contains("ranks_of_selected")) {
        out << "ranks of selected: ";
        bool first = true;
        for (const auto& r : doc["ranks_of_selected"]) {
            out << (first ? "" : ",") << r.get<int>();
            first = false;
        }
        out << "  skipped: " << doc["skipped"].get<std::size_t>() << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// rerank

inline int cmd_rerank(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    auto corpus_path = cfg.require_file("corpus");
    auto queries_path = cfg.require_file("queries");
    auto demos_path = cfg.optional_file("rerank/demos");
    const int depth = cfg.value<int>("rerank/k", 100);
    if (depth < 1) {
        throw ConfigError("rerank k must be >= 1");
    }
    QLConfig base{aggregation(cfg), {}};
    auto bcfg = backend_config(cfg);
    auto tmpl = prompt_template(cfg);
    auto target = output_file(cfg, "rerank.run");

    auto corpus = read_corpus(corpus_path.string(), corpus_format(cfg, corpus_path));
    auto queries = read_queries(queries_path.string());
    DemoSource demos;
    if (demos_path) {
        demos = load_demos(*demos_path);
    }
    auto candidates = first_stage(cfg, corpus, queries, depth);
    auto backend = make_backend(bcfg);
    auto lookup = lookup_in(corpus);
    const auto tag = cfg.value<std::string>("rerank/tag", "parade");

    std::ostringstream run;
    json failures = json::array();
    std::size_t reranked = 0;
    for (const auto& q : queries) {
        auto it = candidates.find(q.id);
        if (it == candidates.end() || it->second.empty()) {
            continue;
        }
        QLConfig config = base;
        config.demos = demos.for_query(q.id);
        try {
            write_trec_run(run, rerank(*backend, tmpl, config, it->second, lookup, q), tag);
            ++reranked;
        } catch (const Error& e) {
            failures.push_back({{"query_id", q.id}, {"error", e.what()}});
        }
    }
    write_text(target, run.str());
    json meta{{"provenance", provenance(cfg, "rerank", backend->id())},
              {"depth", depth},
              {"aggregation", base.aggregation == Aggregation::sum ? "sum" : "mean"},
              {"template_hash", tmpl.hash()},
              {"queries_reranked", reranked},
              {"failures", failures}};
    write_json(target.string() + ".meta.json", meta);
    out << "rerank: " << reranked << " queries reranked -> " << target.string() << "\n";
    if (!failures.empty()) {
        err << "rerank: " << failures.size() << " queries failed:\n";
        for (const auto& f : failures) {
            err << "  " << f["query_id"].get<std::string>() << ": " << f["error"].get<std::string>() << "\n";
        }
        return kExitRuntime;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

inline int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    auto qrels_path = cfg.require_file("qrels");
    const int k = cfg.value<int>("eval/k", 10);
    if (k < 1) {
        throw ConfigError("eval k must be >= 1");
    }
    auto runs = cfg.get("eval/runs");
    if (!runs.is_array() || runs.empty()) {
        throw ConfigError("eval needs at least one run (config eval/runs or --run)");
    }
    std::vector<std::pair<std::string, fs::path>> inputs;
    for (const auto& r : runs) {
        std::string spec = r.get<std::string>();
        std::string label;
        if (auto eq = spec.find('='); eq != std::string::npos) {
            label = spec.substr(0, eq);
            spec = spec.substr(eq + 1);
        }
        auto p = cfg.resolve(spec);
        if (!fs::is_regular_file(p)) {
            throw ConfigError("run file does not exist: " + p.string());
        }
        inputs.emplace_back(label.empty() ? p.stem().string() : label, p);
    }
    auto dir = cfg.output_dir();

    std::vector<std::string> warnings;
    auto judgments = read_qrels(qrels_path.string(), &warnings);
    for (const auto& w : warnings) {
        err << "warning: " << w << "\n";
    }
    const auto dataset = cfg.value<std::string>("dataset", qrels_path.stem().string());
    std::ostringstream table;
    table << std::left << std::setw(24) << ("nDCG@" + std::to_string(k)) << dataset << "\n";
    for (const auto& [label, path] : inputs) {
        auto result = evaluate_run(read_trec_run(path.string()), judgments, k);
        for (const auto& q : result.unjudged) {
            err << "warning: query '" << q << "' has no relevant judgments; scored 0\n";
        }
        for (const auto& q : result.missing_from_run) {
            err << "warning: judged query '" << q << "' is missing from run '" << label << "'; scored 0\n";
        }
        auto report = result.to_json();
        report["run"] = path.filename().string();
        report["provenance"] = provenance(cfg, "eval", "none");
        write_json(dir / ("eval-" + label + ".json"), report);
        char cell[32];
        std::snprintf(cell, sizeof cell, "%.2f", 100.0 * result.mean);
        table << std::left << std::setw(24) << label << cell << "\n";
    }
    out << table.str();
    return kExitOk;
}

// ---------------------------------------------------------------------------
// qgen

inline json read_json_file(const fs::path& p)
{
    std::ifstream in(p);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError("'" + p.string() + "' is not valid JSON: " + e.what());
    }
}

inline int cmd_qgen(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    auto corpus_path = cfg.require_file("corpus");
    auto queries_path = cfg.require_file("queries");
    auto demos_path = cfg.require_file("qgen/demos");
    const int depth = cfg.value<int>("qgen/passages_per_query", 100);
    const int max_tokens = cfg.value<int>("qgen/max_tokens", 32);
    std::optional<fs::path> population_dir;
    if (auto p = cfg.path("qgen/population_dir")) {
        if (!fs::is_directory(*p)) {
            throw ConfigError("'qgen/population_dir' is not a directory: " + p->string());
        }
        population_dir = *p;
    }
    auto bcfg = backend_config(cfg);
    auto tmpl = prompt_template(cfg);
    auto dir = cfg.output_dir();

    auto corpus = read_corpus(corpus_path.string(), corpus_format(cfg, corpus_path));
    auto queries = read_queries(queries_path.string());
    auto demos = load_demos(demos_path);
    if (demos.is_per_query) {
        throw ConfigError("qgen needs a global demonstration list, not per-query selections");
    }
    if (demos.global.empty()) {
        throw ConfigError("qgen demonstration file is empty");
    }
    auto candidates = first_stage(cfg, corpus, queries, depth);
    std::vector<std::pair<std::string, Document>> passages;
    std::map<std::string, Query> truth;
    for (const auto& q : queries) {
        auto it = candidates.find(q.id);
        if (it == candidates.end()) {
            continue;
        }
        truth.emplace(q.id, q);
        for (const auto& e : it->second.entries) {
            passages.emplace_back(q.id, corpus.at(e.candidate.document_id));
        }
    }
    if (passages.empty()) {
        throw ConfigError("qgen found no passages for any query");
    }
    auto backend = make_backend(bcfg);

    std::ostringstream jsonl;
    json scores = json::array();
    json failures = json::array();
    std::vector<QGenScore> subjects;
    for (const auto& demo : demos.global) {
        auto batch = generate_for_passages(*backend, tmpl, demo, passages, max_tokens);
        for (const auto& g : batch.questions) {
            jsonl << to_json(g).dump() << "\n";
        }
        for (const auto& f : batch.failures) {
            failures.push_back({{"demo_id", demo.id()}, {"query_id", f.query_id}, {"passage_id", f.passage_id},
                                {"error", f.message}});
        }
        auto s = score_qgen(*backend, truth, batch.questions);
        s.demo_id = demo.id();
        for (const auto& q : s.excluded_queries) {
            err << "warning: query '" << q << "' has no generations for demo '" << demo.id() << "'\n";
        }
        scores.push_back(s.to_json());
        subjects.push_back(std::move(s));
    }
    write_text(dir / "generations.jsonl", jsonl.str());
    write_json(dir / "qgen_scores.json", {{"scores", scores},
                                          {"failures", failures},
                                          {"max_tokens", max_tokens},
                                          {"passages_per_query", depth},
                                          {"provenance", provenance(cfg, "qgen", backend->id())}});
    for (const auto& s : subjects) {
        char line[160];
        std::snprintf(line, sizeof line, "qgen: %-32s avg max similarity %.4f over %zu queries\n", s.demo_id.c_str(),
                      s.avg_max_similarity, s.queries_scored);
        out << line;
    }

    if (population_dir) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(*population_dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".json") {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        std::vector<QGenScore> population;
        for (const auto& f : files) {
            auto j = read_json_file(f);
            if (!j.contains("scores")) {
                continue;
            }
            for (const auto& s : j["scores"]) {
                QGenScore q;
                q.demo_id = s.at("demo_id").get<std::string>();
                q.avg_max_similarity = s.at("avg_max_similarity").get<double>();
                population.push_back(std::move(q));
            }
        }
        json comparisons = json::object();
        for (const auto& s : subjects) {
            auto cmp = compare_demo_populations(population, s);
            comparisons[s.demo_id] = cmp.to_json();
            char line[160];
            std::snprintf(line, sizeof line, "compare: %-32s percentile %.2f%%  p=%.3g\n", s.demo_id.c_str(),
                          100.0 * cmp.percentile, cmp.p_two_tailed);
            out << line;
        }
        write_json(dir / "qgen_compare.json", {{"population_size", population.size()},
                                               {"comparisons", comparisons},
                                               {"test", "one-sample two-tailed t-test"},
                                               {"provenance", provenance(cfg, "qgen", backend->id())}});
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze

struct Table {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> columns;
};

// Numeric TSV; the first column may be a label. A first line that does not
// parse is a header.
inline Table read_numeric_tsv(const fs::path& p, std::size_t numeric_columns)
{
    auto in = detail::open_input(p.string());
    Table t;
    t.columns.resize(numeric_columns);
    std::string line;
    std::size_t lineno = 0;
    while (detail::next_line(in, line)) {
        ++lineno;
        if (trim(line).empty() || trim(line).front() == '#') {
            continue;
        }
        auto fields = detail::split_tabs(line);
        if (fields.size() != numeric_columns && fields.size() != numeric_columns + 1) {
            throw InputError("expected " + std::to_string(numeric_columns) + " numeric columns", lineno);
        }
        std::size_t offset = fields.size() - numeric_columns;
        std::vector<double> row(numeric_columns);
        bool ok = true;
        for (std::size_t c = 0; c < numeric_columns; ++c) {
            ok = ok && detail::parse_double(trim(fields[offset + c]), row[c]);
        }
        if (!ok) {
            if (t.labels.empty() && t.columns[0].empty()) {
                continue;
            }
            throw InputError("non-numeric value", lineno);
        }
        t.labels.push_back(offset ? std::string(fields[0]) : std::to_string(t.labels.size() + 1));
        for (std::size_t c = 0; c < numeric_columns; ++c) {
            t.columns[c].push_back(row[c]);
        }
    }
    return t;
}

inline std::vector<fs::path> analyze_inputs(const RunConfig& cfg)
{
    auto v = cfg.get("analyze/inputs");
    if (!v.is_array() || v.empty()) {
        throw ConfigError("analyze needs at least one input (config analyze/inputs or --input)");
    }
    std::vector<fs::path> out;
    for (const auto& s : v) {
        auto p = cfg.resolve(s.get<std::string>());
        if (!fs::is_regular_file(p)) {
            throw ConfigError("analyze input does not exist: " + p.string());
        }
        out.push_back(p);
    }
    return out;
}

inline int cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    const auto mode = cfg.value<std::string>("analyze/mode", "correlation");
    json report{{"mode", mode}};

    if (mode == "correlation") {
        // One table with columns x, y; or two single-column files.
        auto inputs = analyze_inputs(cfg);
        std::vector<double> x, y;
        if (inputs.size() == 1) {
            auto t = read_numeric_tsv(inputs[0], 2);
            x = t.columns[0];
            y = t.columns[1];
        } else if (inputs.size() == 2) {
            x = read_numeric_tsv(inputs[0], 1).columns[0];
            y = read_numeric_tsv(inputs[1], 1).columns[0];
        } else {
            throw ConfigError("correlation takes one x/y table or two single-column files");
        }
        auto p = pearson(x, y);
        auto s = spearman(x, y);
        report["pearson"] = p.to_json();
        report["spearman"] = s.to_json();
        char line[128];
        std::snprintf(line, sizeof line, "pearson r=%.4f p=%.4g (n=%zu)\nspearman rho=%.4f p=%.4g\n", p.r,
                      p.p_two_tailed, p.n, s.r, s.p_two_tailed);
        out << line;
    } else if (mode == "bins") {
        // Rows of bin<TAB>nDCG; bins reported in first-appearance order.
        auto t = read_numeric_tsv(analyze_inputs(cfg).at(0), 1);
        std::vector<std::string> order;
        std::map<std::string, std::vector<double>> bins;
        for (std::size_t i = 0; i < t.labels.size(); ++i) {
            if (!bins.count(t.labels[i])) {
                order.push_back(t.labels[i]);
            }
            bins[t.labels[i]].push_back(t.columns[0][i]);
        }
        json rows = json::array();
        for (const auto& b : order) {
            auto d = describe(bins[b]);
            rows.push_back({{"bin", b}, {"mean", d.mean}, {"max", d.max}, {"n", d.n}});
            char line[128];
            std::snprintf(line, sizeof line, "%-16s mean %.4f  max %.4f  (n=%zu)\n", b.c_str(), d.mean, d.max, d.n);
            out << line;
        }
        report["bins"] = rows;
    } else if (mode == "aggregate") {
        std::map<std::string, EvalResult> results;
        for (const auto& p : analyze_inputs(cfg)) {
            auto j = read_json_file(p);
            EvalResult r;
            r.k = j.value("k", 10);
            r.per_query = j.at("per_query").get<std::map<std::string, double>>();
            r.mean = j.at("mean").get<double>();
            results[p.stem().string()] = r;
        }
        auto summary = aggregate_runs(results);
        report["summary"] = summary.to_json();
        const auto& o = summary.overall;
        char line[160];
        std::snprintf(line, sizeof line, "sets=%zu mean %.4f std %.4f%s min %.4f max %.4f\n", o.n, o.mean, o.std,
                      o.std_defined ? "" : " (undefined)", o.min, o.max);
        out << line;
    } else if (mode == "sample-bins") {
        auto pool_path = cfg.require_file("selection/pool");
        auto pool = read_demo_pool(pool_path.string());
        auto tmpl = prompt_template(cfg);
        auto backend = make_backend(backend_config(cfg));
        PromptOptions options{cfg.value<bool>("selection/include_instruction", true)};
        std::size_t computed = 0;
        auto scores = cached_pool_dql(cfg, *backend, tmpl, pool, options, computed);
        std::vector<std::pair<Demonstration, double>> pool_scores;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            pool_scores.emplace_back(pool.demos[i], scores[i]);
        }
        auto percentiles = cfg.value<std::vector<double>>("analyze/percentiles", {0.01, 0.10});
        auto n = cfg.value<std::size_t>("analyze/bin_size", 30);
        json bins = json::array();
        for (auto side : {BinSide::bottom, BinSide::top}) {
            for (double p : percentiles) {
                std::string name = std::string(side == BinSide::bottom ? "bottom" : "top") + "-" +
                                   std::to_string(static_cast<int>(std::lround(p * 100))) + "%";
                auto seed = derive_seed(cfg.seed(), "bins:" + name);
                json demos = json::array();
                for (const auto& d : dql_percentile_bins(pool_scores, p, side, n, seed)) {
                    demos.push_back(demo_to_json(d));
                }
                bins.push_back({{"bin", name}, {"percentile", p}, {"demos", demos}});
                out << name << ": " << demos.size() << " demonstrations\n";
            }
        }
        report["bins"] = bins;
        report["backend_id"] = backend->id();
    } else {
        throw ConfigError("analyze mode must be correlation, bins, aggregate or sample-bins");
    }
    report["provenance"] = provenance(cfg, "analyze", "none");
    write_json(output_file(cfg, "analysis-" + mode + ".json"), report);
    (void)err;
    return kExitOk;
}

/// Runs one command, mapping exceptions to exit codes.
inline int dispatch(const std::string& command, const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    try {
        if (command == "retrieve") return cmd_retrieve(cfg, out, err);
        if (command == "select") return cmd_select(cfg, out, err);
        if (command == "rerank") return cmd_rerank(cfg, out, err);
        if (command == "eval") return cmd_eval(cfg, out, err);
        if (command == "qgen") return cmd_qgen(cfg, out, err);
        if (command == "analyze") return cmd_analyze(cfg, out, err);
        err << "unknown command '" << command << "'\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const BudgetExceeded& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace parade::cli
