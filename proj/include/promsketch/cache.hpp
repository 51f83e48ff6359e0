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

#ifndef PROMSKETCH_CACHE_HPP
#define PROMSKETCH_CACHE_HPP

#include <atomic>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "promsketch/core.hpp"
#include "promsketch/ehkll.hpp"
#include "promsketch/ehuniv.hpp"
#include "promsketch/query.hpp"
#include "promsketch/sampler.hpp"

namespace promsketch {

enum class IngestStatus : std::uint8_t { kAccepted, kOutOfOrder, kDuplicate, kTypeMismatch };

std::string_view to_string(IngestStatus s);

/// Raw samples per series, the in-process stand-in for the backend TSDB. Each series keeps
/// slack * max(required window, retention floor) of history.
class ExactStore {
  public:
    explicit ExactStore(double slack = 2.0, Timestamp retention_floor_ms = 3'600'000);

    /// Creates the series if needed. Returns true when it was new.
    bool ensure(const SeriesId& series);
    bool contains(std::uint64_t id) const;
    /// Duplicate / OutOfOrder against the newest stored timestamp of the series.
    IngestStatus append(const SeriesId& series, Timestamp t, const SampleValue& v);

    /// Samples with t in (q.start, q.end], time-ordered.
    std::vector<StoredSample> range(std::uint64_t id, const TimeWindow& q) const;
    std::optional<Timestamp> newest(std::uint64_t id) const;
    std::vector<SeriesId> match(const Selector& sel) const;
    std::vector<SeriesId> series() const;

    void require_window(std::uint64_t id, Timestamp window_ms);
    double slack() const noexcept { return slack_; }
    std::size_t sample_count() const;

  private:
    struct Series {
        SeriesId id;
        std::deque<StoredSample> samples;
        Timestamp required = 0;
        mutable std::shared_mutex mu;
    };

    Series* find(std::uint64_t id) const;

    double slack_;
    Timestamp floor_;
    mutable std::shared_mutex mu_;
    std::unordered_map<std::uint64_t, std::unique_ptr<Series>> series_;
};

enum class RuleKind { kRecord, kAlert };
enum class CompareOp { kGt, kGe, kLt, kLe, kEq, kNe };

std::string_view to_string(RuleKind k);
std::string_view to_string(CompareOp op);
RuleKind parse_rule_kind(std::string_view s);
CompareOp parse_compare_op(std::string_view s);

struct AlertCondition {
    CompareOp op = CompareOp::kGt;
    double threshold = 0.0;

    bool holds(double value) const noexcept;
    bool operator==(const AlertCondition&) const = default;
};

struct RuleSpec {
    std::string rule_id;
    RuleKind kind = RuleKind::kRecord;
    Timestamp eval_interval_ms = 0;
    std::string expr;
    std::optional<AlertCondition> condition;

    bool operator==(const RuleSpec&) const = default;
};

/// One sketch structure for a (series, family) pair, guarded by its own reader-writer lock.
class CacheInstance {
  public:
    using Payload = std::variant<EhKll, EhUniv, SampleWindow>;

    CacheInstance(SeriesId series, Family family, Payload payload, Timestamp max_window);

    const SeriesId& series() const noexcept { return series_; }
    Family family() const noexcept { return family_; }

    /// Rejects t <= newest insert (Duplicate / OutOfOrder) and strings for numeric families.
    IngestStatus insert(Timestamp t, const SampleValue& v);

    struct View {
        const Payload& payload;
        bool has_data;
        Timestamp first_ts;
        Timestamp last_ts;
        Timestamp coverage_start;  // every sample newer than this is held
        Timestamp max_window;
    };
    /// Runs f(View) under a shared lock.
    template <typename F>
    auto read(F&& f) const {
        std::shared_lock lock(mu_);
        return f(View{payload_, has_data_, first_ts_, last_ts_, coverage_start_, max_window_});
    }

    Timestamp max_window() const;
    std::set<std::string> ref_rules() const;
    /// Estimated heap bytes of the payload.
    std::size_t memory_bytes() const;
    std::size_t serialized_bytes() const;
    std::size_t bucket_count() const;
    std::uint64_t accepted() const noexcept { return accepted_.load(); }
    std::uint64_t rejected() const noexcept { return rejected_.load(); }

  private:
    friend class SketchCache;

    void set_max_window(Timestamp window);

    SeriesId series_;
    Family family_;
    mutable std::shared_mutex mu_;
    Payload payload_;
    Timestamp max_window_;
    bool has_data_ = false;
    Timestamp first_ts_ = 0;
    Timestamp last_ts_ = 0;
    Timestamp coverage_start_ = 0;
    std::set<std::string> ref_rules_;
    std::atomic<std::uint64_t> accepted_{0};
    std::atomic<std::uint64_t> rejected_{0};
    std::atomic<std::uint64_t> last_used_{0};
};

/// kDisabled and kInstanceError are set by the query engine: caching switched off, or a hit whose
/// sketch could not answer (the exact path served it).
enum class CacheMiss { kNone, kNoInstance, kWindowTooOld, kColdStart, kDisabled, kInstanceError };

std::string_view to_string(CacheMiss m);

struct CacheConfig {
    SketchConfig quantile = SketchConfig::quantile_defaults();
    SketchConfig gsum = SketchConfig::gsum_defaults();
    SketchConfig sample = SketchConfig::sampling_defaults();
    double exact_slack = 2.0;
    Timestamp exact_retention_floor_ms = 3'600'000;
    /// Instance-count cap with least-recently-used eviction; 0 disables it.
    std::size_t max_instances = 0;
};

/**
 * Registry of cache instances keyed by (series, family), created by rule registration and fed by
 * ingestion. Lookups and ingestion share the registry lock; register/unregister take it exclusively.
 */
class SketchCache {
  public:
    explicit SketchCache(CacheConfig config = {});

    struct Registration {
        bool supported = true;
        std::string notice;
        std::vector<std::shared_ptr<CacheInstance>> instances;
    };
    /// ParseError propagates. An unsupported function is a no-op with a notice. Re-registering an
    /// identical rule is idempotent; a changed spec under the same id replaces the old one.
    Registration register_rule(const RuleSpec& rule);
    /// Returns the number of instances destroyed. Throws UnknownRule.
    std::size_t unregister_rule(const std::string& rule_id);
    std::vector<RuleSpec> rules() const;
    std::optional<RuleSpec> rule(const std::string& rule_id) const;

    /// Per-sample statuses, as decided by the exact store. Instances reject independently.
    std::vector<IngestStatus> ingest_serial(std::span<const DataSample> batch);
    /// Groups the batch by series and ingests the groups in parallel; same result as ingest_serial.
    std::vector<IngestStatus> ingest_parallel(std::span<const DataSample> batch);

    struct Lookup {
        std::shared_ptr<CacheInstance> instance;
        CacheMiss miss = CacheMiss::kNoInstance;
        bool hit() const noexcept { return miss == CacheMiss::kNone; }
    };
    Lookup lookup(std::uint64_t series_id, Family family, const TimeWindow& q) const;
    std::shared_ptr<CacheInstance> instance(std::uint64_t series_id, Family family) const;
    std::vector<std::shared_ptr<CacheInstance>> instances() const;
    std::size_t instance_count() const;

    /// Sum of instance payload heap bytes.
    std::size_t memory_bytes() const;
    std::size_t serialized_bytes() const;

    ExactStore& store() noexcept { return store_; }
    const ExactStore& store() const noexcept { return store_; }
    const CacheConfig& config() const noexcept { return config_; }

    /// Binary snapshot of instance payloads: magic, version, then length-prefixed records.
    void save_snapshot(const std::string& path) const;
    /// Restores payloads for instances of the registered rules, creating them for series not yet seen.
    /// Records no registered rule covers are skipped. Returns the restored count.
    std::size_t load_snapshot(const std::string& path);

  private:
    struct RuleEntry {
        RuleSpec spec;
        QueryExpr expr;
        Family family;
    };
    struct Key {
        std::uint64_t series;
        Family family;
        bool operator==(const Key&) const = default;
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const noexcept {
            return mix64(k.series ^ (static_cast<std::uint64_t>(k.family) + 1) * 0x9e3779b97f4a7c15ULL);
        }
    };

    // All private helpers expect the registry lock held exclusively.
    void attach(const SeriesId& series, const std::string& rule_id, const RuleEntry& rule,
                std::vector<std::shared_ptr<CacheInstance>>* out);
    void detach(const std::string& rule_id, std::size_t* removed);
    void refresh_window(CacheInstance& inst);
    void attach_new_series(std::span<const DataSample> batch);
    void evict_if_needed();
    CacheInstance::Payload make_payload(Family family, const SeriesId& series, Timestamp window) const;
    IngestStatus ingest_one(const DataSample& s, const std::vector<std::shared_ptr<CacheInstance>>* fanout);

    CacheConfig config_;
    ExactStore store_;
    mutable std::shared_mutex mu_;
    std::map<std::string, RuleEntry> rules_;
    std::unordered_map<Key, std::shared_ptr<CacheInstance>, KeyHash> instances_;
    std::unordered_map<std::uint64_t, std::vector<std::shared_ptr<CacheInstance>>> fanout_;
    mutable std::atomic<std::uint64_t> clock_{0};
};

}  // namespace promsketch

#endif  // PROMSKETCH_CACHE_HPP
