#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "parade/core.hpp"

namespace parade {

/// nDCG@k with gain 2^rel - 1 and discount log2(rank + 1). The ideal ordering
/// is taken over every judged document of the query; IDCG = 0 yields 0.
inline double ndcg_at_k(const RankedList& ranked, const Judgments& judgments, int k = 10)
{
    if (k < 1) {
        throw Error("ndcg_at_k: k must be >= 1");
    }
    const auto& grades = judgments.for_query(ranked.query_id);
    auto gain = [](int rel) { return std::ldexp(1.0, rel) - 1.0; };

    std::vector<int> ideal;
    for (const auto& [doc, g] : grades) {
        if (g > 0) {
            ideal.push_back(g);
        }
    }
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < ideal.size() && i < static_cast<std::size_t>(k); ++i) {
        idcg += gain(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
    }
    if (idcg == 0.0) {
        return 0.0;
    }
    double dcg = 0.0;
    for (std::size_t i = 0; i < ranked.entries.size() && i < static_cast<std::size_t>(k); ++i) {
        auto it = grades.find(ranked.entries[i].candidate.document_id);
        int rel = it == grades.end() ? 0 : it->second;
        dcg += gain(rel) / std::log2(static_cast<double>(i) + 2.0);
    }
    return std::clamp(dcg / idcg, 0.0, 1.0);
}

struct EvalResult {
    int k = 10;
    std::map<std::string, double> per_query;
    double mean = 0.0;
    std::vector<std::string> unjudged;        // in the run, no relevant judgments: scored 0
    std::vector<std::string> missing_from_run; // judged relevant, absent from the run: scored 0

    nlohmann::json to_json() const
    {
        return {{"k", k},
                {"per_query", per_query},
                {"mean", mean},
                {"num_queries", per_query.size()},
                {"unjudged", unjudged},
                {"missing_from_run", missing_from_run}};
    }
};

/// Scores every query of the run, plus every judged query the run lacks.
inline EvalResult evaluate_run(const std::map<std::string, RankedList>& run, const Judgments& judgments, int k = 10)
{
    EvalResult result;
    result.k = k;
    for (const auto& [qid, list] : run) {
        result.per_query[qid] = ndcg_at_k(list, judgments, k);
        const auto& grades = judgments.for_query(qid);
        bool any_relevant = std::any_of(grades.begin(), grades.end(), [](const auto& g) { return g.second > 0; });
        if (!any_relevant) {
            result.unjudged.push_back(qid);
        }
    }
    for (const auto& [qid, grades] : judgments.all()) {
        bool any_relevant = std::any_of(grades.begin(), grades.end(), [](const auto& g) { return g.second > 0; });
        if (any_relevant && !run.count(qid)) {
            result.per_query[qid] = 0.0;
            result.missing_from_run.push_back(qid);
        }
    }
    double total = 0.0;
    for (const auto& [qid, v] : result.per_query) {
        total += v;
    }
    result.mean = result.per_query.empty() ? 0.0 : total / static_cast<double>(result.per_query.size());
    return result;
}

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x)
{
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) {
            return h;
        }
    }
    throw Error("incomplete beta: continued fraction did not converge");
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x)
{
    if (!(a > 0.0 && b > 0.0)) {
        throw Error("regularized_incomplete_beta: a and b must be positive");
    }
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * detail::beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
inline double student_t_two_tailed(double t, double df)
{
    if (!(df > 0.0)) {
        throw Error("student_t_two_tailed: df must be positive");
    }
    if (std::isnan(t)) {
        throw Error("student_t_two_tailed: t is NaN");
    }
    if (std::isinf(t)) {
        return 0.0;
    }
    return std::clamp(regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)), 0.0, 1.0);
}

/// P(T <= t) for Student's t.
inline double student_t_cdf(double t, double df)
{
    double tail = student_t_two_tailed(t, df) / 2.0;
    return t >= 0.0 ? 1.0 - tail : tail;
}

struct CorrelationResult {
    double r = 0.0;
    double p_two_tailed = 1.0;
    std::size_t n = 0;
    std::string method = "pearson";
    std::string significance = "two-tailed t-test, n-2 df";

    nlohmann::json to_json() const
    {
        return {{"method", method}, {"r", r}, {"p", p_two_tailed}, {"n", n}, {"significance", significance}};
    }
};

namespace detail {

inline bool is_constant(std::span<const double> v)
{
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

} // namespace detail

/// Sample Pearson r with a two-tailed p from t = r sqrt((n-2)/(1-r^2)).
inline CorrelationResult pearson(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size()) {
        throw Error("pearson: inputs differ in length (" + std::to_string(x.size()) + " vs " +
                    std::to_string(y.size()) + ")");
    }
    if (x.size() < 3) {
        throw Error("pearson: at least 3 pairs are required");
    }
    if (detail::is_constant(x) || detail::is_constant(y)) {
        throw Error("pearson: undefined for a constant input");
    }
    const auto n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    CorrelationResult out;
    out.n = x.size();
    out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double denom = 1.0 - out.r * out.r;
    if (denom <= 0.0) {
        out.p_two_tailed = 0.0;
    } else {
        const double t = out.r * std::sqrt((n - 2.0) / denom);
        out.p_two_tailed = student_t_two_tailed(t, n - 2.0);
    }
    return out;
}

/// 1-based ranks, ties get the average rank.
inline std::vector<double> average_ranks(std::span<const double> v)
{
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) {
            ranks[order[t]] = avg;
        }
        i = j + 1;
    }
    return ranks;
}

inline CorrelationResult spearman(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size()) {
        throw Error("spearman: inputs differ in length");
    }
    auto rx = average_ranks(x);
    auto ry = average_ranks(y);
    auto out = pearson(rx, ry);
    out.method = "spearman";
    return out;
}

struct TTestResult {
    double t = 0.0;
    double p_two_tailed = 1.0;
    double df = 0.0;
};

/// One-sample two-tailed t-test of `value` against the population mean.
inline TTestResult t_test_one_sample(std::span<const double> population, double value)
{
    if (population.size() < 2) {
        throw Error("t_test_one_sample: at least 2 observations are required");
    }
    if (detail::is_constant(population)) {
        throw Error("t_test_one_sample: population is constant");
    }
    const auto n = static_cast<double>(population.size());
    const double mean = std::accumulate(population.begin(), population.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : population) {
        ss += (x - mean) * (x - mean);
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    TTestResult out;
    out.df = n - 1.0;
    out.t = (value - mean) / (sd / std::sqrt(n));
    out.p_two_tailed = student_t_two_tailed(out.t, out.df);
    return out;
}

struct Descriptive {
    double mean = 0.0;
    double std = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::size_t n = 0;
    bool std_defined = false; // false for n = 1, where std is reported as 0

    nlohmann::json to_json() const
    {
        return {{"mean", mean}, {"std", std}, {"min", min}, {"max", max}, {"n", n}, {"std_defined", std_defined}};
    }
};

inline Descriptive describe(std::span<const double> values)
{
    if (values.empty()) {
        throw Error("describe: no values");
    }
    Descriptive d;
    d.n = values.size();
    d.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(d.n);
    auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    d.min = *lo;
    d.max = *hi;
    if (d.n > 1) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - d.mean) * (v - d.mean);
        }
        d.std = std::sqrt(ss / static_cast<double>(d.n - 1));
        d.std_defined = true;
    }
    return d;
}

struct RunSummary {
    std::map<std::string, Descriptive> per_set; // over each set's per-query values
    Descriptive overall;                        // over the per-set means

    nlohmann::json to_json() const
    {
        nlohmann::json sets = nlohmann::json::object();
        for (const auto& [id, d] : per_set) {
            sets[id] = d.to_json();
        }
        return {{"per_set", sets}, {"overall", overall.to_json()}};
    }
};

/// Mean, sample std, min and max per demonstration set and across sets.
inline RunSummary aggregate_runs(const std::map<std::string, EvalResult>& results)
{
    if (results.empty()) {
        throw Error("aggregate_runs: no runs");
    }
    RunSummary summary;
    std::vector<double> means;
    for (const auto& [id, result] : results) {
        std::vector<double> values;
        for (const auto& [qid, v] : result.per_query) {
            values.push_back(v);
        }
        if (!values.empty()) {
            summary.per_set[id] = describe(values);
        }
        means.push_back(result.mean);
    }
    summary.overall = describe(means);
    return summary;
}

} // namespace parade
