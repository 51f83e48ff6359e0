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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "promsketch/engine.hpp"
#include "promsketch/harness.hpp"

using namespace promsketch;

namespace {

RuleSpec rule(std::string id, std::string expr) {
    RuleSpec r;
    r.rule_id = std::move(id);
    r.kind = RuleKind::kRecord;
    r.eval_interval_ms = 5000;
    r.expr = std::move(expr);
    return r;
}

struct Point {
    Timestamp ts;
    double value;
};

std::vector<Point> in_window(const std::vector<Point>& all, const TimeWindow& q) {
    std::vector<Point> out;
    for (const auto& p : all)
        if (p.ts > q.start && p.ts <= q.end) out.push_back(p);
    return out;
}

// Truth for a scalar function, computed with the harness reference statistics only.
double oracle(QueryFunction f, const std::vector<Point>& pts, std::optional<double> arg) {
    std::vector<double> v;
    std::vector<Token> tokens;
    for (const auto& p : pts) {
        v.push_back(p.value);
        tokens.push_back(TokenInterner::token_for_double(p.value));
    }
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    switch (f) {
        case QueryFunction::kQuantile:
            return harness::reference::quantile(sorted, *arg);
        case QueryFunction::kMin:
            return sorted.front();
        case QueryFunction::kMax:
            return sorted.back();
        case QueryFunction::kCount:
            return static_cast<double>(v.size());
        case QueryFunction::kSum:
            return harness::reference::sum(v);
        case QueryFunction::kAvg:
            return harness::reference::mean(v);
        case QueryFunction::kStdvar:
            return harness::reference::variance(v);
        case QueryFunction::kStddev:
            return std::sqrt(harness::reference::variance(v));
        case QueryFunction::kEntropy:
            return harness::reference::entropy(tokens);
        case QueryFunction::kDistinct:
            return harness::reference::distinct(tokens);
        case QueryFunction::kL2:
            return harness::reference::l2(tokens);
        case QueryFunction::kTopk:
            break;
    }
    throw std::logic_error("topk has no scalar oracle");
}

double scalar(const SeriesResult& r) { return std::get<double>(*r.value); }

}  // namespace

TEST(QueryEngine, NoSeriesMatchedIsEmptyNotFailure) {
    SketchCache cache;
    QueryEngine engine(cache);
    const auto r = engine.evaluate("avg_over_time(nothing[1m])", 60000);
    EXPECT_TRUE(r.no_series_matched());
    EXPECT_EQ(r.source, ResultSource::kExact);
}

TEST(QueryEngine, RejectsNegativeTime) {
    SketchCache cache;
    QueryEngine engine(cache);
    EXPECT_THROW(engine.evaluate("avg_over_time(x[1m])", -1), Error);
}

TEST(QueryEngine, ColdCacheIsExactAndMatchesOracle) {
    SketchCache cache;
    const auto a = canonicalize("x", {{"host", "a"}});
    const auto b = canonicalize("x", {{"host", "b"}});
    std::vector<Point> pa, pb;
    std::vector<DataSample> batch;
    for (int i = 1; i <= 100; ++i) {
        pa.push_back({i * 1000, static_cast<double>(i % 7)});
        pb.push_back({i * 1000, static_cast<double>(i * i % 11)});
        batch.push_back({a, i * 1000, pa.back().value});
        batch.push_back({b, i * 1000, pb.back().value});
    }
    cache.ingest_serial(batch);
    QueryEngine engine(cache);
    const auto r = engine.evaluate("quantile_over_time(0.5, x[30s] offset 10s)", 100000);
    EXPECT_EQ(r.window, TimeWindow(60000, 90000));
    ASSERT_EQ(r.series.size(), 2u);
    EXPECT_EQ(r.source, ResultSource::kExact);
    EXPECT_EQ(r.series[0].series, a);
    for (const auto& s : r.series) {
        EXPECT_EQ(s.source, ResultSource::kExact);
        EXPECT_EQ(s.miss, CacheMiss::kNoInstance);
        EXPECT_FALSE(s.annotation);
    }
    EXPECT_EQ(scalar(r.series[0]), oracle(QueryFunction::kQuantile, in_window(pa, r.window), 0.5));
    EXPECT_EQ(scalar(r.series[1]), oracle(QueryFunction::kQuantile, in_window(pb, r.window), 0.5));
}

TEST(QueryEngine, PerSeriesErrorsAreCarried) {
    SketchCache cache;
    const auto a = canonicalize("x", {{"host", "a"}});
    const auto b = canonicalize("x", {{"host", "b"}});
    cache.ingest_serial(std::vector<DataSample>{{a, 1000, 1.0}, {b, 50000, 2.0}});
    QueryEngine engine(cache);
    const auto r = engine.evaluate("avg_over_time(x[10s])", 55000);
    ASSERT_EQ(r.series.size(), 2u);
    EXPECT_EQ(r.series[0].error_code, ErrorCode::kEmptyRange);
    EXPECT_FALSE(r.series[0].value);
    EXPECT_EQ(scalar(r.series[1]), 2.0);
    const auto c = engine.evaluate("count_over_time(x[10s])", 55000);
    EXPECT_EQ(scalar(c.series[0]), 0.0);
}

TEST(QueryEngineProperty, FallbackEquivalence) {
    const std::vector<std::string> funcs{"quantile_over_time(0.25, ", "min_over_time(", "max_over_time(",
                                         "count_over_time(", "sum_over_time(", "avg_over_time(",
                                         "stddev_over_time(", "stdvar_over_time(", "entropy_over_time(",
                                         "distinct_over_time(", "l2_over_time(", "topk_over_time(3, "};
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        SketchCache cache;
        const int n_series = 1 + static_cast<int>(rng() % 4);
        std::vector<DataSample> batch;
        for (int s = 0; s < n_series; ++s) {
            const auto id = canonicalize("m", {{"s", std::to_string(s)}});
            Timestamp t = 0;
            for (int i = 0; i < 300; ++i) {
                t += 1 + static_cast<Timestamp>(rng() % 2000);
                batch.push_back({id, t, static_cast<double>(rng() % 40) - 10.0});
            }
        }
        // Rules exist so instances are warm; with caching off they must not matter.
        for (std::size_t i = 0; i < funcs.size(); ++i) cache.register_rule(rule("r" + std::to_string(i), funcs[i] + "m[10m])"));
        cache.ingest_serial(batch);
        QueryEngine engine(cache, false);
        for (int q = 0; q < 40; ++q) {
            const auto text = funcs[rng() % funcs.size()] + "m[" + std::to_string(1 + rng() % 200) + "s] offset " +
                              std::to_string(rng() % 100) + "s)";
            const auto expr = parse_query(text);
            const Timestamp at = static_cast<Timestamp>(rng() % 700'000);
            const auto r = engine.evaluate(expr, at);
            ASSERT_EQ(r.series.size(), static_cast<std::size_t>(n_series));
            for (const auto& s : r.series) {
                EXPECT_EQ(s.source, ResultSource::kExact);
                EXPECT_EQ(s.miss, CacheMiss::kDisabled);
                const auto samples = cache.store().range(s.series.canonical_id, r.window);
                try {
                    const auto want = exact_eval(expr.func, samples, expr.arg);
                    ASSERT_TRUE(s.value) << text;
                    EXPECT_EQ(*s.value, want) << text;
                } catch (const Error& e) {
                    EXPECT_EQ(s.error_code, e.code()) << text;
                }
            }
        }
    }
}

TEST(QueryEngine, WarmQuantileWithinRankBound) {
    SketchCache cache;
    cache.register_rule(rule("q", "quantile_over_time(0.9, lat[100s])"));
    const auto id = canonicalize("lat", {});
    auto stream = harness::generate(harness::DatasetKind::kZipf, 200000, 5, 1, 1);
    std::vector<DataSample> batch;
    std::vector<Point> pts;
    for (const auto& p : stream) {
        batch.push_back({id, p.ts, p.value});
        pts.push_back({p.ts, p.value});
    }
    cache.ingest_serial(batch);
    QueryEngine engine(cache);
    const Timestamp now = pts.back().ts;
    for (const Timestamp range : {100'000, 50'000, 10'000}) {
        for (const double phi : {0.1, 0.5, 0.9, 0.99}) {
            const auto text = "quantile_over_time(" + std::to_string(phi) + ", lat[" + std::to_string(range / 1000) + "s])";
            const auto r = engine.evaluate(text, now);
            ASSERT_EQ(r.series.size(), 1u);
            const auto& s = r.series[0];
            ASSERT_EQ(s.source, ResultSource::kCache) << text;
            ASSERT_TRUE(s.annotation);
            EXPECT_EQ(s.annotation->bound_kind, "suffix_rank");
            auto window = in_window(pts, r.window);
            std::vector<double> sorted;
            for (const auto& p : window) sorted.push_back(p.value);
            std::sort(sorted.begin(), sorted.end());
            const double n = static_cast<double>(sorted.size());
            const double dist = harness::rank_distance(scalar(s), std::ceil(phi * n), sorted);
            EXPECT_LE(dist / n, s.annotation->epsilon) << text;
        }
    }
    EXPECT_GT(engine.hits(), 0u);
}

TEST(QueryEngine, AlertDecisionsAgreeOutsideTheBand) {
    SketchCache cache;
    cache.register_rule(rule("ent", "entropy_over_time(src_ip[200s])"));
    const auto id = canonicalize("src_ip", {});
    std::mt19937_64 rng(3);
    std::vector<Point> pts;
    QueryEngine engine(cache);
    const double threshold = 6.0;
    int decided = 0, agree = 0, cached = 0;
    // Alternating calm (few sources) and attack (many sources) phases, evaluated as a rule would be:
    // at the newest timestamp after every ingested chunk.
    for (Timestamp chunk_end = 7'000; chunk_end <= 400'000; chunk_end += 7'000) {
        std::vector<DataSample> batch;
        for (Timestamp t = chunk_end - 7'000 + 4; t <= chunk_end; t += 4) {
            const bool attack = (t / 50'000) % 2 == 1;
            const double v = static_cast<double>(attack ? rng() % 5000 : rng() % 8);
            batch.push_back({id, t, v});
            pts.push_back({t, v});
        }
        cache.ingest_serial(batch);
        for (const int secs : {10, 30, 60}) {
            const auto r = engine.evaluate("entropy_over_time(src_ip[" + std::to_string(secs) + "s])", chunk_end);
            const auto& s = r.series.at(0);
            if (s.source != ResultSource::kCache) continue;
            ++cached;
            const double truth = oracle(QueryFunction::kEntropy, in_window(pts, r.window), std::nullopt);
            if (std::abs(truth - threshold) <= s.annotation->epsilon * truth) continue;
            ++decided;
            agree += (scalar(s) > threshold) == (truth > threshold);
        }
    }
    EXPECT_GT(cached, 100);
    EXPECT_GT(decided, 100);
    EXPECT_EQ(agree, decided);
}

TEST(QueryEngine, DeterministicAndParallelMatchesSerial) {
    SketchCache cache;
    cache.register_rule(rule("d", "distinct_over_time(m[30s])"));
    cache.register_rule(rule("s", "sum_over_time(m[30s])"));
    std::mt19937_64 rng(9);
    std::vector<DataSample> batch;
    for (int s = 0; s < 12; ++s) {
        const auto id = canonicalize("m", {{"s", std::to_string(s)}});
        for (Timestamp t = 1; t <= 60'000; t += 1 + static_cast<Timestamp>(rng() % 30)) batch.push_back({id, t, double(rng() % 100)});
    }
    cache.ingest_parallel(batch);
    QueryEngine engine(cache);
    for (const auto* text : {"distinct_over_time(m[20s])", "sum_over_time(m[20s])", "topk_over_time(5, m[20s])",
                             "max_over_time(m[90s])"}) {
        const auto a = engine.evaluate(text, 60'000);
        const auto b = engine.evaluate_serial(parse_query(text), 60'000);
        const auto c = engine.evaluate(text, 60'000);
        ASSERT_EQ(a.series.size(), 12u);
        EXPECT_EQ(a.source, b.source);
        for (std::size_t i = 0; i < a.series.size(); ++i) {
            EXPECT_EQ(a.series[i].series, b.series[i].series);
            EXPECT_EQ(a.series[i].value, b.series[i].value) << text;
            EXPECT_EQ(a.series[i].value, c.series[i].value) << text;
            EXPECT_EQ(a.series[i].source, b.series[i].source);
        }
    }
    EXPECT_EQ(engine.evaluate("distinct_over_time(m[20s])", 60'000).source, ResultSource::kCache);
    EXPECT_EQ(engine.evaluate("max_over_time(m[20s])", 60'000).source, ResultSource::kExact);
}

TEST(QueryEngine, MixedSourcesWhenOnlySomeSeriesAreCached) {
    SketchCache cache;
    const auto a = canonicalize("m", {{"s", "a"}});
    const auto b = canonicalize("m", {{"s", "b"}});
    cache.register_rule(rule("a", "avg_over_time(m{s=\"a\"}[1m])"));
    std::vector<DataSample> batch;
    for (Timestamp t = 1000; t <= 60'000; t += 1000) {
        batch.push_back({a, t, 1.0});
        batch.push_back({b, t, 2.0});
    }
    cache.ingest_serial(batch);
    QueryEngine engine(cache);
    const auto r = engine.evaluate("avg_over_time(m[30s])", 60'000);
    EXPECT_EQ(r.source, ResultSource::kMixed);
    EXPECT_EQ(r.series[0].source, ResultSource::kCache);
    EXPECT_EQ(r.series[1].source, ResultSource::kExact);
    EXPECT_EQ(scalar(r.series[0]), 1.0);
    EXPECT_EQ(scalar(r.series[1]), 2.0);
}
