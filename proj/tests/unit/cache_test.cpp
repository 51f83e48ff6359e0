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
#include <malloc.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "promsketch/cache.hpp"
#include "promsketch/harness.hpp"
#include "registry_model.hpp"

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

const SeriesId& cpu() {
    static const SeriesId id = canonicalize("cpu", {{"host", "a"}});
    return id;
}

std::vector<DataSample> ramp(const SeriesId& s, Timestamp from, Timestamp step, int n, double base = 0) {
    std::vector<DataSample> out;
    for (int i = 0; i < n; ++i) out.push_back({s, from + i * step, base + i});
    return out;
}

std::vector<std::uint8_t> payload_bytes(const CacheInstance& inst) {
    ByteWriter w;
    inst.read([&](const CacheInstance::View& v) {
        std::visit([&](const auto& p) { p.serialize(w); }, v.payload);
        return 0;
    });
    return std::move(w).take();
}

// glibc parks freed small chunks in a per-thread cache that mallinfo2 still counts as in use. Filling
// it before a measurement makes its contribution the same at both ends.
void fill_thread_cache() {
    std::vector<void*> held;
    for (std::size_t size = 16; size <= 1040; size += 16)
        for (int i = 0; i < 16; ++i) held.push_back(std::malloc(size));
    for (void* p : held) std::free(p);
}

}  // namespace

TEST(SketchCache, RulesShareOneInstancePerFamily) {
    SketchCache cache;
    cache.ingest_serial(ramp(cpu(), 1000, 1000, 3));
    auto a = cache.register_rule(rule("short", "quantile_over_time(0.5, cpu{host=\"a\"}[5m])"));
    auto b = cache.register_rule(rule("long", "max_over_time(cpu[10m])"));
    ASSERT_EQ(a.instances.size(), 1u);
    ASSERT_EQ(b.instances.size(), 1u);
    EXPECT_EQ(a.instances[0], b.instances[0]);
    EXPECT_EQ(cache.instance_count(), 1u);
    EXPECT_EQ(b.instances[0]->max_window(), 600000);
    EXPECT_EQ(b.instances[0]->ref_rules(), (std::set<std::string>{"long", "short"}));
    cache.register_rule(rule("ent", "entropy_over_time(cpu[1m])"));
    EXPECT_EQ(cache.instance_count(), 2u);
}

TEST(SketchCache, UnsupportedRuleIsNotCached) {
    SketchCache cache;
    cache.ingest_serial(ramp(cpu(), 1000, 1000, 3));
    auto r = cache.register_rule(rule("last", "last_over_time(cpu[5m])"));
    EXPECT_FALSE(r.supported);
    EXPECT_TRUE(r.instances.empty());
    EXPECT_EQ(cache.instance_count(), 0u);
    EXPECT_TRUE(cache.rules().empty());
    EXPECT_THROW(cache.register_rule(rule("bad", "avg_over_time(cpu[0s])")), ParseError);
}

TEST(SketchCache, DuplicateRegistrationIsIdempotent) {
    SketchCache cache;
    cache.ingest_serial(ramp(cpu(), 1000, 1000, 3));
    auto r = rule("r", "avg_over_time(cpu[5m])");
    auto first = cache.register_rule(r);
    cache.ingest_serial(ramp(cpu(), 4000, 1000, 3));
    auto second = cache.register_rule(r);
    ASSERT_EQ(second.instances.size(), 1u);
    EXPECT_EQ(first.instances[0], second.instances[0]);
    EXPECT_EQ(second.instances[0]->accepted(), 3u);
}

TEST(SketchCache, UnregisterCounts) {
    SketchCache cache;
    cache.ingest_serial(ramp(cpu(), 1000, 1000, 3));
    cache.register_rule(rule("solo", "sum_over_time(cpu[5m])"));
    EXPECT_EQ(cache.unregister_rule("solo"), 1u);
    EXPECT_EQ(cache.instance_count(), 0u);
    cache.register_rule(rule("a", "quantile_over_time(0.5, cpu[5m])"));
    cache.register_rule(rule("b", "min_over_time(cpu[10m])"));
    EXPECT_EQ(cache.unregister_rule("a"), 0u);
    EXPECT_EQ(cache.instance_count(), 1u);
    try {
        cache.unregister_rule("missing");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kUnknownRule);
    }
}

TEST(SketchCache, RemovingLargerWindowStopsServingOldRanges) {
    SketchCache cache;
    cache.ingest_serial(ramp(cpu(), 1000, 1000, 1));
    cache.register_rule(rule("small", "quantile_over_time(0.5, cpu[5m])"));
    cache.register_rule(rule("large", "quantile_over_time(0.9, cpu[10m])"));
    cache.ingest_serial(ramp(cpu(), 2000, 1000, 900));
    const Timestamp now = 901000;
    const TimeWindow eight_minutes(now - 480000, now);
    EXPECT_TRUE(cache.lookup(cpu().canonical_id, Family::kQuantile, eight_minutes).hit());
    cache.unregister_rule("large");
    auto inst = cache.instance(cpu().canonical_id, Family::kQuantile);
    ASSERT_TRUE(inst);
    EXPECT_EQ(inst->max_window(), 300000);
    // Data older than the new window may still sit in buckets, but it is never consulted.
    EXPECT_EQ(cache.lookup(cpu().canonical_id, Family::kQuantile, eight_minutes).miss, CacheMiss::kWindowTooOld);
    EXPECT_TRUE(cache.lookup(cpu().canonical_id, Family::kQuantile, {now - 300000, now}).hit());
}

TEST(SketchCache, IngestStatuses) {
    SketchCache cache;
    const auto other = canonicalize("cpu", {{"host", "b"}});
    std::vector<DataSample> batch{{cpu(), 10, 1.0}, {other, 5, 1.0}, {cpu(), 20, 2.0}, {other, 6, 2.0}};
    for (auto s : cache.ingest_serial(batch)) EXPECT_EQ(s, IngestStatus::kAccepted);
    std::vector<DataSample> again{{cpu(), 20, 3.0}, {cpu(), 15, 3.0}, {cpu(), 21, 3.0}};
    auto st = cache.ingest_serial(again);
    EXPECT_EQ(st[0], IngestStatus::kDuplicate);
    EXPECT_EQ(st[1], IngestStatus::kOutOfOrder);
    EXPECT_EQ(st[2], IngestStatus::kAccepted);
    EXPECT_EQ(cache.store().range(cpu().canonical_id, {0, 100}).size(), 3u);
}

TEST(SketchCache, RejectionAtOneInstanceLeavesOthersAlone) {
    SketchCache cache;
    cache.register_rule(rule("q", "quantile_over_time(0.5, cpu[5m])"));
    cache.register_rule(rule("e", "entropy_over_time(cpu[5m])"));
    std::vector<DataSample> batch{{cpu(), 1000, std::string("x")}, {cpu(), 2000, 4.0}};
    auto st = cache.ingest_serial(batch);
    EXPECT_EQ(st[0], IngestStatus::kAccepted);
    auto q = cache.instance(cpu().canonical_id, Family::kQuantile);
    auto e = cache.instance(cpu().canonical_id, Family::kGsum);
    EXPECT_EQ(q->rejected(), 1u);
    EXPECT_EQ(q->accepted(), 1u);
    EXPECT_EQ(e->accepted(), 2u);
    EXPECT_EQ(e->rejected(), 0u);
}

TEST(SketchCache, LookupReasons) {
    SketchCache cache;
    cache.ingest_serial(ramp(cpu(), 1000, 1000, 100));
    EXPECT_EQ(cache.lookup(cpu().canonical_id, Family::kQuantile, {50000, 100000}).miss, CacheMiss::kNoInstance);
    cache.register_rule(rule("r", "quantile_over_time(0.5, cpu[1m])"));
    EXPECT_EQ(cache.lookup(cpu().canonical_id, Family::kQuantile, {50000, 100000}).miss, CacheMiss::kColdStart);
    cache.ingest_serial(ramp(cpu(), 101000, 1000, 100));
    const Timestamp now = 200000;
    EXPECT_TRUE(cache.lookup(cpu().canonical_id, Family::kQuantile, {now - 60000, now}).hit());
    EXPECT_EQ(cache.lookup(cpu().canonical_id, Family::kQuantile, {now - 60001, now}).miss, CacheMiss::kWindowTooOld);
    // Widening to 10m cannot bring back what the 1m span already expired: coverage starts at now - 1m.
    cache.register_rule(rule("wide", "quantile_over_time(0.5, cpu[10m])"));
    EXPECT_EQ(cache.lookup(cpu().canonical_id, Family::kQuantile, {now - 60001, now}).miss, CacheMiss::kColdStart);
    EXPECT_TRUE(cache.lookup(cpu().canonical_id, Family::kQuantile, {now - 60000, now}).hit());
    cache.ingest_serial(ramp(cpu(), 201000, 1000, 600));
    EXPECT_TRUE(cache.lookup(cpu().canonical_id, Family::kQuantile, {800000 - 600000, 800000}).hit());
}

TEST(SketchCache, WindowRaiseKeepsOnlyCoveredHistory) {
    SketchCache cache;
    cache.register_rule(rule("r", "avg_over_time(cpu[10s])"));
    cache.ingest_serial(ramp(cpu(), 1000, 1000, 100));
    cache.register_rule(rule("w", "avg_over_time(cpu[1m])"));
    auto inst = cache.instance(cpu().canonical_id, Family::kSample);
    // The 10s instance only held (90000, 100000] when the window grew.
    inst->read([](const CacheInstance::View& v) {
        EXPECT_EQ(v.coverage_start, 90000);
        return 0;
    });
    EXPECT_EQ(cache.lookup(cpu().canonical_id, Family::kSample, {80000, 100000}).miss, CacheMiss::kColdStart);
    EXPECT_TRUE(cache.lookup(cpu().canonical_id, Family::kSample, {90000, 100000}).hit());
}

TEST(SketchCache, RuleBeforeSeriesCreatesInstanceOnIngest) {
    SketchCache cache;
    auto r = cache.register_rule(rule("r", "distinct_over_time(src_ip{vm=\"instance1\"}[5s])"));
    EXPECT_TRUE(r.instances.empty());
    const auto ip = canonicalize("src_ip", {{"vm", "instance1"}});
    const auto other = canonicalize("src_ip", {{"vm", "instance2"}});
    cache.ingest_serial(std::vector<DataSample>{{ip, 1, std::string("10.0.0.1")}, {other, 1, std::string("10.0.0.2")}});
    EXPECT_EQ(cache.instance_count(), 1u);
    ASSERT_TRUE(cache.instance(ip.canonical_id, Family::kGsum));
    EXPECT_EQ(cache.instance(ip.canonical_id, Family::kGsum)->accepted(), 1u);
}

TEST(SketchCache, ParallelIngestMatchesSerial) {
    CacheConfig config;
    SketchCache serial(config), parallel(config);
    std::vector<SeriesId> series;
    for (int i = 0; i < 12; ++i) series.push_back(canonicalize("m", {{"i", std::to_string(i)}}));
    for (auto* c : {&serial, &parallel}) {
        c->register_rule(rule("q", "quantile_over_time(0.9, m[30s])"));
        c->register_rule(rule("g", "entropy_over_time(m[30s])"));
        c->register_rule(rule("s", "avg_over_time(m[30s])"));
    }
    std::mt19937_64 rng(5);
    std::vector<Timestamp> clock(series.size(), 0);
    for (int round = 0; round < 20; ++round) {
        std::vector<DataSample> batch;
        for (int i = 0; i < 3000; ++i) {
            const auto s = rng() % series.size();
            clock[s] += static_cast<Timestamp>(rng() % 10) - 1;
            batch.push_back({series[s], clock[s], static_cast<double>(rng() % 1000)});
        }
        ASSERT_EQ(serial.ingest_serial(batch), parallel.ingest_parallel(batch));
    }
    const auto a = serial.instances(), b = parallel.instances();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(payload_bytes(*a[i]), payload_bytes(*b[i]));
}

TEST(SketchCache, SnapshotRoundTrip) {
    const auto path = (std::filesystem::temp_directory_path() / "promsketch_cache_test.snap").string();
    SketchCache cache;
    const std::vector<RuleSpec> rules{rule("q", "quantile_over_time(0.9, cpu[1m])"), rule("g", "l2_over_time(cpu[1m])"),
                                      rule("s", "stddev_over_time(cpu[1m])")};
    for (const auto& r : rules) cache.register_rule(r);
    auto stream = harness::generate(harness::DatasetKind::kZipf, 20000, 3, 0, 10);
    std::vector<DataSample> batch;
    for (const auto& p : stream) batch.push_back({cpu(), p.ts + 1, p.value});
    cache.ingest_serial(batch);
    cache.save_snapshot(path);

    // A restarted cache knows the rules but has seen no series yet.
    SketchCache fresh;
    for (const auto& r : rules) fresh.register_rule(r);
    EXPECT_EQ(fresh.instance_count(), 0u);
    EXPECT_EQ(fresh.load_snapshot(path), 3u);
    const auto a = cache.instances(), b = fresh.instances();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(payload_bytes(*a[i]), payload_bytes(*b[i]));
        EXPECT_EQ(a[i]->bucket_count(), b[i]->bucket_count());
    }
    // Ingestion resumes after the restored newest sample.
    const Timestamp next = stream.back().ts + 2;
    EXPECT_EQ(fresh.ingest_serial(std::vector<DataSample>{{cpu(), next, 1.0}})[0], IngestStatus::kAccepted);
    for (const auto& inst : fresh.instances()) EXPECT_EQ(inst->accepted(), 1u);
    // A cache without matching rules restores nothing.
    SketchCache bare;
    EXPECT_EQ(bare.load_snapshot(path), 0u);
    std::filesystem::remove(path);
}

TEST(SketchCache, SnapshotRejectsForeignFiles) {
    const auto path = (std::filesystem::temp_directory_path() / "promsketch_not_a_snapshot").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "garbage!";
    }
    SketchCache cache;
    try {
        cache.load_snapshot(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kCorruptData);
    }
    std::filesystem::remove(path);
}

// Reported payload bytes track what the allocator holds, for each family at a few window sizes.
TEST(SketchCache, MemoryAccountingTracksAllocator) {
    auto measure = [](auto make, auto feed) {
        fill_thread_cache();
        const auto before = mallinfo2().uordblks;
        auto payload = make();
        feed(*payload);
        const auto after = mallinfo2().uordblks;
        return std::pair(static_cast<double>(after - before) - sizeof(*payload), static_cast<double>(payload->memory_usage()));
    };
    for (std::size_t n : {100000u, 400000u}) {
        auto stream = harness::generate(harness::DatasetKind::kZipf, n, 4);
        const Timestamp span = static_cast<Timestamp>(n) * harness::kDefaultStepMs;
        const auto kll = measure([&] { return std::make_unique<EhKll>(SketchConfig::quantile_defaults(), span); },
                                 [&](EhKll& e) { for (const auto& p : stream) e.insert(p.ts, p.value); });
        const auto univ = measure([&] { return std::make_unique<EhUniv>(SketchConfig::gsum_defaults(), span); },
                                  [&](EhUniv& e) { for (const auto& p : stream) e.insert(p.ts, TokenInterner::token_for_double(p.value)); });
        const auto samp = measure([&] { return std::make_unique<SampleWindow>(0.1, span, 1); },
                                  [&](SampleWindow& e) { for (const auto& p : stream) e.insert(p.ts, p.value); });
        for (const auto& [measured, reported] : {kll, univ, samp}) EXPECT_NEAR(reported, measured, 0.05 * measured) << n;
    }
    SketchCache cache;
    cache.ingest_serial(std::vector<DataSample>{{cpu(), 0, 0.0}});
    cache.register_rule(rule("q", "quantile_over_time(0.5, cpu[1h])"));
    cache.register_rule(rule("g", "entropy_over_time(cpu[1h])"));
    cache.ingest_serial(ramp(cpu(), 1, 1, 5000));
    std::size_t sum = 0;
    for (const auto& inst : cache.instances()) sum += inst->memory_bytes();
    EXPECT_EQ(cache.memory_bytes(), sum);
}

TEST(SketchCacheProperty, RegistryMatchesReferenceModel) {
    const auto stats = check::run_registry_model_check(500, 40, 7);
    EXPECT_EQ(stats.divergences, 0u) << stats.first_divergence;
    EXPECT_GT(stats.hits, 0u);
    EXPECT_LT(stats.hits, stats.lookups);
}
