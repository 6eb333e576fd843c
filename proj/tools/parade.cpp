#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "parade/cli.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string absolute(const std::string& p) { return fs::absolute(p).string(); }

struct Overrides {
    std::string config;
    std::string output_dir;
    std::string out;
    std::string backend_url;
    std::string template_spec;
    std::string first_stage_run;
    std::string qrels;
    std::string demos;
    std::string pool;
    std::string filter;
    std::string strategy;
    std::string cdql_mode;
    std::string aggregation;
    std::string mode;
    std::string population_dir;
    std::vector<std::string> runs;
    std::vector<std::string> inputs;
    std::optional<std::uint64_t> seed;
    std::optional<int> k;
    std::optional<int> m;
};

// Flags become a JSON merge patch over the config file; flags win.
json to_patch(const std::string& command, const Overrides& o)
{
    json patch = json::object();
    if (!o.output_dir.empty()) patch["output_dir"] = absolute(o.output_dir);
    if (!o.out.empty()) patch["out"] = absolute(o.out);
    if (!o.backend_url.empty()) patch["backend"] = {{"kind", "http"}, {"endpoint", o.backend_url}};
    if (!o.template_spec.empty()) {
        patch["template"] = o.template_spec.rfind("builtin:", 0) == 0 ? o.template_spec : absolute(o.template_spec);
    }
    if (o.seed) patch["seed"] = *o.seed;
    if (!o.qrels.empty()) patch["qrels"] = absolute(o.qrels);
    if (!o.pool.empty()) patch["selection"]["pool"] = absolute(o.pool);
    if (!o.filter.empty()) patch["selection"]["filter"] = absolute(o.filter);
    if (!o.strategy.empty()) patch["selection"]["strategy"] = o.strategy;
    if (!o.cdql_mode.empty()) patch["selection"]["cdql_mode"] = o.cdql_mode;
    if (o.m) patch["selection"]["m"] = *o.m;
    if (!o.aggregation.empty()) patch["rerank"]["aggregation"] = o.aggregation;
    if (!o.mode.empty()) patch["analyze"]["mode"] = o.mode;
    if (!o.population_dir.empty()) patch["qgen"]["population_dir"] = absolute(o.population_dir);
    if (!o.inputs.empty()) {
        json list = json::array();
        for (const auto& i : o.inputs) list.push_back(absolute(i));
        patch["analyze"]["inputs"] = list;
    }
    if (!o.demos.empty()) {
        patch[command == "qgen" ? "qgen" : "rerank"]["demos"] = absolute(o.demos);
    }
    if (!o.runs.empty()) {
        if (command == "eval") {
            json list = json::array();
            for (const auto& r : o.runs) {
                auto eq = r.find('=');
                list.push_back(eq == std::string::npos ? absolute(r)
                                                       : r.substr(0, eq + 1) + absolute(r.substr(eq + 1)));
            }
            patch["eval"]["runs"] = list;
        } else {
            patch["first_stage_run"] = absolute(o.runs.front());
        }
    }
    if (o.k) {
        if (command == "rerank") patch["rerank"]["k"] = *o.k;
        else if (command == "select") patch["selection"]["k"] = *o.k;
        else if (command == "eval") patch["eval"]["k"] = *o.k;
        else if (command == "qgen") patch["qgen"]["passages_per_query"] = *o.k;
        else if (command == "retrieve") patch["bm25"]["top_k"] = *o.k;
    }
    return patch;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"parade: query-likelihood re-ranking with selected demonstrations"};
    app.require_subcommand(1);
    app.set_version_flag("--version", parade::cli::kVersion);

    Overrides o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON run config")->required();
        sub->add_option("--output-dir", o.output_dir, "Directory for outputs");
        sub->add_option("--out", o.out, "Explicit output file");
        sub->add_option("--backend-url", o.backend_url, "Use the HTTP backend at this URL");
        sub->add_option("--template", o.template_spec, "Template JSON path or builtin:<name>");
        sub->add_option("--seed", o.seed, "Top-level seed");
    };

    auto* retrieve = app.add_subcommand("retrieve", "BM25 first-stage retrieval to a TREC run");
    add_common(retrieve);
    retrieve->add_option("--k", o.k, "Documents per query");

    auto* select = app.add_subcommand("select", "Select demonstrations");
    add_common(select);
    select->add_option("--strategy", o.strategy, "random | sbs | dbs_dql | dbs_cdql");
    select->add_option("--k", o.k, "Demonstrations to select");
    select->add_option("--m", o.m, "DQL shortlist size");
    select->add_option("--pool", o.pool, "Demonstration pool JSONL");
    select->add_option("--filter", o.filter, "Filter verdict file");
    select->add_option("--cdql-mode", o.cdql_mode, "exact | greedy");

    auto* rerank = app.add_subcommand("rerank", "Point-wise query-likelihood re-ranking");
    add_common(rerank);
    rerank->add_option("--k", o.k, "First-stage candidates per query");
    rerank->add_option("--run", o.runs, "First-stage TREC run")->expected(1);
    rerank->add_option("--demos", o.demos, "Selection report JSON or demonstration JSONL");
    rerank->add_option("--aggregation", o.aggregation, "sum | mean");

    auto* eval = app.add_subcommand("eval", "nDCG@k of TREC runs");
    add_common(eval);
    eval->add_option("--run", o.runs, "Run file, optionally label=path (repeatable)");
    eval->add_option("--qrels", o.qrels, "TREC qrels");
    eval->add_option("--k", o.k, "Cutoff");

    auto* qgen = app.add_subcommand("qgen", "One-shot question generation and similarity scoring");
    add_common(qgen);
    qgen->add_option("--demos", o.demos, "Demonstrations, one generation pass each");
    qgen->add_option("--k", o.k, "Passages per query");
    qgen->add_option("--run", o.runs, "First-stage TREC run")->expected(1);
    qgen->add_option("--population-dir", o.population_dir, "Directory of qgen score reports to compare against");

    auto* analyze = app.add_subcommand("analyze", "Correlation, bin and aggregate analyses");
    add_common(analyze);
    analyze->add_option("--mode", o.mode, "correlation | bins | aggregate | sample-bins");
    analyze->add_option("--input", o.inputs, "Input file (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : parade::cli::kExitConfig;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    if (!o.backend_url.empty()) {
        // The flag outranks the environment variable.
        ::setenv("PARADE_BACKEND_URL", o.backend_url.c_str(), 1);
    }
    try {
        auto cfg = parade::cli::load_run_config(o.config, to_patch(command, o));
        return parade::cli::dispatch(command, cfg, std::cout, std::cerr);
    } catch (const parade::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return parade::cli::kExitConfig;
    }
}
