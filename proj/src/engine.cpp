/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#include "promsketch/engine.hpp"

#include <cmath>

namespace promsketch {

namespace {

GsumStat gsum_stat(QueryFunction f) {
    switch (f) {
        case QueryFunction::kEntropy:
            return GsumStat::kEntropy;
        case QueryFunction::kDistinct:
            return GsumStat::kL0;
        default:
            return GsumStat::kL2;
    }
}

SampleStat sample_stat(QueryFunction f) {
    switch (f) {
        case QueryFunction::kCount:
            return SampleStat::kCount;
        case QueryFunction::kSum:
            return SampleStat::kSum;
        case QueryFunction::kStddev:
            return SampleStat::kStddev;
        case QueryFunction::kStdvar:
            return SampleStat::kStdvar;
        default:
            return SampleStat::kAvg;
    }
}

struct CachedAnswer {
    QueryValue value;
    ErrorAnnotation annotation;
};

CachedAnswer answer_from(const QueryExpr& expr, const TimeWindow& q, const CacheInstance::Payload& payload) {
    if (const auto* kll = std::get_if<EhKll>(&payload)) {
        const double phi = expr.func == QueryFunction::kMin ? 0.0 : expr.func == QueryFunction::kMax ? 1.0 : *expr.arg;
        return {kll->query(q, phi), {"suffix_rank", kll->suffix_rank_bound()}};
    }
    if (const auto* univ = std::get_if<EhUniv>(&payload)) {
        const auto& c = univ->config();
        const ErrorAnnotation note{"suffix_relative", 2.0 / c.k_eh + c.hh_epsilon};
        if (expr.func == QueryFunction::kTopk) return {univ->topk(q, static_cast<std::size_t>(*expr.arg)), note};
        return {univ->query(q, gsum_stat(expr.func)), note};
    }
    const auto& s = std::get<SampleWindow>(payload);
    const double p = s.probability();
    const double kept = s.query(q, SampleStat::kCount) * p;
    // Relative standard error of a Bernoulli(p) sample estimate with `kept` retained samples.
    const ErrorAnnotation note{"sampling_rse", std::sqrt((1.0 - p) / std::max(1.0, kept))};
    return {s.query(q, sample_stat(expr.func)), note};
}

}  // namespace

std::string_view to_string(ResultSource s) {
    switch (s) {
        case ResultSource::kCache:
            return "CACHE";
        case ResultSource::kExact:
            return "EXACT";
        case ResultSource::kMixed:
            return "MIXED";
    }
    return "?";
}

QueryResult QueryEngine::prepare(const QueryExpr& expr, Timestamp at) const {
    if (at < 0) throw Error(ErrorCode::kInvalidArgument, "evaluation time must be >= 0");
    QueryResult r;
    r.expr = expr;
    r.window = expr.window_at(at);
    for (auto& s : cache_.store().match(expr.selector)) {
        r.series.emplace_back();
        r.series.back().series = std::move(s);
    }
    return r;
}

void QueryEngine::finish(QueryResult& r) {
    bool any_cache = false, any_exact = r.series.empty();
    for (const auto& s : r.series) (s.source == ResultSource::kCache ? any_cache : any_exact) = true;
    r.source = any_cache && any_exact ? ResultSource::kMixed : any_cache ? ResultSource::kCache : ResultSource::kExact;
}

void QueryEngine::evaluate_series(const QueryExpr& expr, const TimeWindow& q, SeriesResult& out) const {
    const auto id = out.series.canonical_id;
    if (use_cache_) {
        auto found = cache_.lookup(id, family_of(expr.func), q);
        out.miss = found.miss;
        if (found.hit()) {
            try {
                auto answer = found.instance->read([&](const CacheInstance::View& v) {
                    // The instance holds every sample up to its newest insert; later ones do not exist yet.
                    const TimeWindow clipped(q.start, std::min(q.end, v.last_ts));
                    return answer_from(expr, clipped, v.payload);
                });
                out.value = std::move(answer.value);
                out.annotation = std::move(answer.annotation);
                out.source = ResultSource::kCache;
                ++hits_;
                return;
            } catch (const Error&) {
                // Instance-level failure (empty range after clipping, expired buckets): use raw samples.
                out.miss = CacheMiss::kInstanceError;
            }
        }
    } else {
        out.miss = CacheMiss::kDisabled;
    }
    ++misses_;
    out.source = ResultSource::kExact;
    try {
        const auto samples = cache_.store().range(id, q);
        out.value = exact_eval(expr.func, samples, expr.arg);
    } catch (const Error& e) {
        out.error_code = e.code();
        out.error = e.what();
    }
}

QueryResult QueryEngine::evaluate_serial(const QueryExpr& expr, Timestamp at) const {
    auto r = prepare(expr, at);
    for (auto& s : r.series) evaluate_series(expr, r.window, s);
    finish(r);
    return r;
}

QueryResult QueryEngine::evaluate(const QueryExpr& expr, Timestamp at) const {
    auto r = prepare(expr, at);
    const auto n = static_cast<std::int64_t>(r.series.size());
#pragma omp parallel for schedule(dynamic, 1) if (n > 1)
    for (std::int64_t i = 0; i < n; ++i) evaluate_series(expr, r.window, r.series[static_cast<std::size_t>(i)]);
    finish(r);
    return r;
}

}  // namespace promsketch
