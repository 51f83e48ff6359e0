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

#include "promsketch/cache.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>

namespace promsketch {

namespace {

constexpr char kSnapshotMagic[4] = {'P', 'S', 'K', 'C'};
constexpr std::uint32_t kSnapshotVersion = 1;

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

IngestStatus order_status(Timestamp t, Timestamp newest) {
    return t == newest ? IngestStatus::kDuplicate : IngestStatus::kOutOfOrder;
}

}  // namespace

std::string_view to_string(IngestStatus s) {
    switch (s) {
        case IngestStatus::kAccepted:
            return "accepted";
        case IngestStatus::kOutOfOrder:
            return "out_of_order";
        case IngestStatus::kDuplicate:
            return "duplicate";
        case IngestStatus::kTypeMismatch:
            return "type_mismatch";
    }
    return "?";
}

std::string_view to_string(CacheMiss m) {
    switch (m) {
        case CacheMiss::kNone:
            return "hit";
        case CacheMiss::kNoInstance:
            return "no_instance";
        case CacheMiss::kWindowTooOld:
            return "window_too_old";
        case CacheMiss::kColdStart:
            return "cold_start";
        case CacheMiss::kDisabled:
            return "cache_disabled";
        case CacheMiss::kInstanceError:
            return "instance_error";
    }
    return "?";
}

std::string_view to_string(RuleKind k) { return k == RuleKind::kAlert ? "alert" : "record"; }

std::string_view to_string(CompareOp op) {
    switch (op) {
        case CompareOp::kGt:
            return ">";
        case CompareOp::kGe:
            return ">=";
        case CompareOp::kLt:
            return "<";
        case CompareOp::kLe:
            return "<=";
        case CompareOp::kEq:
            return "==";
        case CompareOp::kNe:
            return "!=";
    }
    return "?";
}

RuleKind parse_rule_kind(std::string_view s) {
    if (s == "alert") return RuleKind::kAlert;
    if (s == "record") return RuleKind::kRecord;
    throw Error(ErrorCode::kInvalidArgument, "rule kind must be 'alert' or 'record'");
}

CompareOp parse_compare_op(std::string_view s) {
    for (auto op : {CompareOp::kGt, CompareOp::kGe, CompareOp::kLt, CompareOp::kLe, CompareOp::kEq, CompareOp::kNe})
        if (to_string(op) == s) return op;
    throw Error(ErrorCode::kInvalidArgument, "unknown comparison operator");
}

bool AlertCondition::holds(double v) const noexcept {
    switch (op) {
        case CompareOp::kGt:
            return v > threshold;
        case CompareOp::kGe:
            return v >= threshold;
        case CompareOp::kLt:
            return v < threshold;
        case CompareOp::kLe:
            return v <= threshold;
        case CompareOp::kEq:
            return v == threshold;
        case CompareOp::kNe:
            return v != threshold;
    }
    return false;
}

// ExactStore

ExactStore::ExactStore(double slack, Timestamp retention_floor_ms) : slack_(slack), floor_(retention_floor_ms) {
    if (!(slack >= 1.0)) throw Error(ErrorCode::kInvalidArgument, "exact buffer slack must be >= 1");
    if (retention_floor_ms <= 0) throw Error(ErrorCode::kInvalidArgument, "retention floor must be positive");
}

bool ExactStore::ensure(const SeriesId& series) {
    std::unique_lock lock(mu_);
    auto [it, fresh] = series_.try_emplace(series.canonical_id);
    if (fresh) {
        it->second = std::make_unique<Series>();
        it->second->id = series;
    }
    return fresh;
}

bool ExactStore::contains(std::uint64_t id) const {
    std::shared_lock lock(mu_);
    return series_.contains(id);
}

ExactStore::Series* ExactStore::find(std::uint64_t id) const {
    std::shared_lock lock(mu_);
    auto it = series_.find(id);
    return it == series_.end() ? nullptr : it->second.get();
}

IngestStatus ExactStore::append(const SeriesId& series, Timestamp t, const SampleValue& v) {
    Series* s = find(series.canonical_id);
    if (!s) {
        ensure(series);
        s = find(series.canonical_id);
    }
    std::unique_lock lock(s->mu);
    if (!s->samples.empty() && t <= s->samples.back().ts) return order_status(t, s->samples.back().ts);
    s->samples.push_back({t, v});
    const auto keep = static_cast<Timestamp>(slack_ * static_cast<double>(std::max(s->required, floor_)));
    while (s->samples.front().ts <= t - keep) s->samples.pop_front();
    return IngestStatus::kAccepted;
}

std::vector<StoredSample> ExactStore::range(std::uint64_t id, const TimeWindow& q) const {
    const Series* s = find(id);
    if (!s) return {};
    std::shared_lock lock(s->mu);
    auto lo = std::partition_point(s->samples.begin(), s->samples.end(), [&](const auto& x) { return x.ts <= q.start; });
    auto hi = std::partition_point(lo, s->samples.end(), [&](const auto& x) { return x.ts <= q.end; });
    return {lo, hi};
}

std::optional<Timestamp> ExactStore::newest(std::uint64_t id) const {
    const Series* s = find(id);
    if (!s) return std::nullopt;
    std::shared_lock lock(s->mu);
    if (s->samples.empty()) return std::nullopt;
    return s->samples.back().ts;
}

std::vector<SeriesId> ExactStore::match(const Selector& sel) const {
    std::vector<SeriesId> out;
    std::shared_lock lock(mu_);
    for (const auto& [id, s] : series_)
        if (sel.matches(s->id)) out.push_back(s->id);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.to_string() < b.to_string(); });
    return out;
}

std::vector<SeriesId> ExactStore::series() const {
    std::vector<SeriesId> out;
    std::shared_lock lock(mu_);
    for (const auto& [id, s] : series_) out.push_back(s->id);
    return out;
}

void ExactStore::require_window(std::uint64_t id, Timestamp window_ms) {
    Series* s = find(id);
    if (!s) return;
    std::unique_lock lock(s->mu);
    s->required = std::max(s->required, window_ms);
}

std::size_t ExactStore::sample_count() const {
    std::size_t n = 0;
    std::shared_lock lock(mu_);
    for (const auto& [id, s] : series_) {
        std::shared_lock slock(s->mu);
        n += s->samples.size();
    }
    return n;
}

// CacheInstance

CacheInstance::CacheInstance(SeriesId series, Family family, Payload payload, Timestamp max_window)
    : series_(std::move(series)), family_(family), payload_(std::move(payload)), max_window_(max_window) {}

IngestStatus CacheInstance::insert(Timestamp t, const SampleValue& v) {
    std::unique_lock lock(mu_);
    if (has_data_ && t <= last_ts_) {
        ++rejected_;
        return order_status(t, last_ts_);
    }
    const double* d = std::get_if<double>(&v);
    try {
        const bool ok = std::visit(Overloaded{
                                       [&](EhKll& p) { return d && (p.insert(t, *d), true); },
                                       [&](EhUniv& p) { return p.insert(t, TokenInterner::global().token_for(v)), true; },
                                       [&](SampleWindow& p) { return d && (p.insert(t, *d), true); },
                                   },
                                   payload_);
        if (!ok) {
            ++rejected_;
            return IngestStatus::kTypeMismatch;
        }
    } catch (const Error&) {
        ++rejected_;
        return IngestStatus::kTypeMismatch;
    }
    if (!has_data_) {
        has_data_ = true;
        first_ts_ = t;
        coverage_start_ = t;
    }
    last_ts_ = t;
    ++accepted_;
    return IngestStatus::kAccepted;
}

void CacheInstance::set_max_window(Timestamp window) {
    std::unique_lock lock(mu_);
    // Raising the window cannot recover data the old span already expired.
    if (window > max_window_ && has_data_) coverage_start_ = std::max(coverage_start_, last_ts_ - max_window_);
    max_window_ = window;
    std::visit([&](auto& p) { p.set_span(window); }, payload_);
}

Timestamp CacheInstance::max_window() const {
    std::shared_lock lock(mu_);
    return max_window_;
}

std::set<std::string> CacheInstance::ref_rules() const {
    std::shared_lock lock(mu_);
    return ref_rules_;
}

std::size_t CacheInstance::memory_bytes() const {
    std::shared_lock lock(mu_);
    return std::visit([](const auto& p) { return p.memory_usage(); }, payload_);
}

std::size_t CacheInstance::serialized_bytes() const {
    std::shared_lock lock(mu_);
    return std::visit([](const auto& p) { return p.serialized_size(); }, payload_);
}

std::size_t CacheInstance::bucket_count() const {
    std::shared_lock lock(mu_);
    return std::visit(Overloaded{
                          [](const EhKll& p) { return p.window().bucket_count(); },
                          [](const EhUniv& p) { return p.window().bucket_count(); },
                          [](const SampleWindow& p) { return p.size(); },
                      },
                      payload_);
}

// SketchCache

SketchCache::SketchCache(CacheConfig config)
    : config_(std::move(config)), store_(config_.exact_slack, config_.exact_retention_floor_ms) {
    config_.quantile.validate();
    config_.gsum.validate();
    config_.sample.validate();
}

CacheInstance::Payload SketchCache::make_payload(Family family, const SeriesId& series, Timestamp window) const {
    switch (family) {
        case Family::kQuantile:
            return EhKll(config_.quantile, window);
        case Family::kGsum:
            return EhUniv(config_.gsum, window);
        case Family::kSample:
            break;
    }
    return SampleWindow(config_.sample.sample_prob, window, seeded_hash(series.canonical_id, config_.sample.seed));
}

void SketchCache::refresh_window(CacheInstance& inst) {
    Timestamp w = 0;
    for (const auto& id : inst.ref_rules_) w = std::max(w, rules_.at(id).expr.lookback_ms());
    if (w != inst.max_window_) inst.set_max_window(w);
    store_.require_window(inst.series_.canonical_id, w);
}

void SketchCache::evict_if_needed() {
    if (config_.max_instances == 0) return;
    while (instances_.size() >= config_.max_instances) {
        auto victim = std::min_element(instances_.begin(), instances_.end(), [](const auto& a, const auto& b) {
            return a.second->last_used_.load() < b.second->last_used_.load();
        });
        auto& list = fanout_[victim->first.series];
        std::erase(list, victim->second);
        if (list.empty()) fanout_.erase(victim->first.series);
        instances_.erase(victim);
    }
}

void SketchCache::attach(const SeriesId& series, const std::string& rule_id, const RuleEntry& rule,
                         std::vector<std::shared_ptr<CacheInstance>>* out) {
    const Key key{series.canonical_id, rule.family};
    auto it = instances_.find(key);
    if (it == instances_.end()) {
        evict_if_needed();
        const auto window = rule.expr.lookback_ms();
        auto inst = std::make_shared<CacheInstance>(series, rule.family, make_payload(rule.family, series, window), window);
        it = instances_.emplace(key, std::move(inst)).first;
        fanout_[series.canonical_id].push_back(it->second);
    }
    auto& inst = *it->second;
    {
        std::unique_lock lock(inst.mu_);
        inst.ref_rules_.insert(rule_id);
    }
    inst.last_used_ = ++clock_;
    refresh_window(inst);
    if (out) out->push_back(it->second);
}

void SketchCache::detach(const std::string& rule_id, std::size_t* removed) {
    for (auto it = instances_.begin(); it != instances_.end();) {
        auto& inst = *it->second;
        std::size_t left = 0;
        bool had = false;
        {
            std::unique_lock lock(inst.mu_);
            had = inst.ref_rules_.erase(rule_id) > 0;
            left = inst.ref_rules_.size();
        }
        if (had && left == 0) {
            auto& list = fanout_[it->first.series];
            std::erase(list, it->second);
            if (list.empty()) fanout_.erase(it->first.series);
            it = instances_.erase(it);
            if (removed) ++*removed;
            continue;
        }
        if (had) refresh_window(inst);
        ++it;
    }
}

SketchCache::Registration SketchCache::register_rule(const RuleSpec& rule) {
    if (rule.rule_id.empty()) throw Error(ErrorCode::kInvalidArgument, "rule id must be nonempty");
    if (rule.eval_interval_ms <= 0) throw Error(ErrorCode::kInvalidArgument, "evaluation interval must be positive");
    if (rule.kind == RuleKind::kAlert && !rule.condition)
        throw Error(ErrorCode::kInvalidArgument, "alert rule needs a condition");
    Registration reg;
    QueryExpr expr;
    try {
        expr = parse_query(rule.expr);
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::kUnsupportedFunction) throw;
        reg.supported = false;
        reg.notice = std::string("not cached: ") + e.what();
        return reg;
    }
    std::unique_lock lock(mu_);
    if (auto it = rules_.find(rule.rule_id); it != rules_.end()) {
        if (it->second.spec == rule) {
            for (const auto& [key, inst] : instances_)
                if (inst->ref_rules().contains(rule.rule_id)) reg.instances.push_back(inst);
            reg.notice = "already registered";
            return reg;
        }
        detach(rule.rule_id, nullptr);
        rules_.erase(it);
    }
    const RuleEntry entry{rule, expr, family_of(expr.func)};
    rules_.emplace(rule.rule_id, entry);
    for (const auto& series : store_.match(expr.selector)) attach(series, rule.rule_id, entry, &reg.instances);
    return reg;
}

std::size_t SketchCache::unregister_rule(const std::string& rule_id) {
    std::unique_lock lock(mu_);
    auto it = rules_.find(rule_id);
    if (it == rules_.end()) throw Error(ErrorCode::kUnknownRule, "unknown rule " + rule_id);
    // Windows are recomputed without this rule, so it leaves the table first.
    rules_.erase(it);
    std::size_t removed = 0;
    detach(rule_id, &removed);
    return removed;
}

std::vector<RuleSpec> SketchCache::rules() const {
    std::shared_lock lock(mu_);
    std::vector<RuleSpec> out;
    for (const auto& [id, r] : rules_) out.push_back(r.spec);
    return out;
}

std::optional<RuleSpec> SketchCache::rule(const std::string& rule_id) const {
    std::shared_lock lock(mu_);
    auto it = rules_.find(rule_id);
    if (it == rules_.end()) return std::nullopt;
    return it->second.spec;
}

void SketchCache::attach_new_series(std::span<const DataSample> batch) {
    std::vector<const SeriesId*> fresh;
    for (const auto& s : batch)
        if (!store_.contains(s.series.canonical_id)) fresh.push_back(&s.series);
    if (fresh.empty()) return;
    std::unique_lock lock(mu_);
    for (const SeriesId* series : fresh) {
        if (!store_.ensure(*series)) continue;
        for (const auto& [id, rule] : rules_)
            if (rule.expr.selector.matches(*series)) attach(*series, id, rule, nullptr);
    }
}

IngestStatus SketchCache::ingest_one(const DataSample& s, const std::vector<std::shared_ptr<CacheInstance>>* fanout) {
    const auto status = store_.append(s.series, s.timestamp, s.value);
    // Instances only see what the store kept, so the cache never holds a sample the exact path lacks.
    if (status == IngestStatus::kAccepted && fanout)
        for (const auto& inst : *fanout) inst->insert(s.timestamp, s.value);
    return status;
}

std::vector<IngestStatus> SketchCache::ingest_serial(std::span<const DataSample> batch) {
    attach_new_series(batch);
    std::vector<IngestStatus> out(batch.size());
    std::shared_lock lock(mu_);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto it = fanout_.find(batch[i].series.canonical_id);
        out[i] = ingest_one(batch[i], it == fanout_.end() ? nullptr : &it->second);
    }
    return out;
}

std::vector<IngestStatus> SketchCache::ingest_parallel(std::span<const DataSample> batch) {
    attach_new_series(batch);
    std::vector<IngestStatus> out(batch.size());
    // Per-series groups keep batch order inside a series; series are independent of each other.
    std::unordered_map<std::uint64_t, std::size_t> group_of;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto [it, fresh] = group_of.try_emplace(batch[i].series.canonical_id, groups.size());
        if (fresh) groups.emplace_back();
        groups[it->second].push_back(i);
    }
    std::shared_lock lock(mu_);
    const auto n = static_cast<std::int64_t>(groups.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t g = 0; g < n; ++g) {
        const auto& idx = groups[static_cast<std::size_t>(g)];
        auto it = fanout_.find(batch[idx.front()].series.canonical_id);
        const auto* fanout = it == fanout_.end() ? nullptr : &it->second;
        for (std::size_t i : idx) out[i] = ingest_one(batch[i], fanout);
    }
    return out;
}

SketchCache::Lookup SketchCache::lookup(std::uint64_t series_id, Family family, const TimeWindow& q) const {
    std::shared_lock lock(mu_);
    auto it = instances_.find(Key{series_id, family});
    if (it == instances_.end()) return {};
    it->second->last_used_ = ++clock_;
    const auto miss = it->second->read([&](const CacheInstance::View& v) {
        if (!v.has_data) return CacheMiss::kColdStart;
        if (q.start < v.last_ts - v.max_window) return CacheMiss::kWindowTooOld;
        if (q.start < v.coverage_start) return CacheMiss::kColdStart;
        return CacheMiss::kNone;
    });
    return {it->second, miss};
}

std::shared_ptr<CacheInstance> SketchCache::instance(std::uint64_t series_id, Family family) const {
    std::shared_lock lock(mu_);
    auto it = instances_.find(Key{series_id, family});
    return it == instances_.end() ? nullptr : it->second;
}

std::vector<std::shared_ptr<CacheInstance>> SketchCache::instances() const {
    std::shared_lock lock(mu_);
    std::vector<std::shared_ptr<CacheInstance>> out;
    for (const auto& [key, inst] : instances_) out.push_back(inst);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return std::pair(a->series().canonical_id, a->family()) < std::pair(b->series().canonical_id, b->family());
    });
    return out;
}

std::size_t SketchCache::instance_count() const {
    std::shared_lock lock(mu_);
    return instances_.size();
}

std::size_t SketchCache::memory_bytes() const {
    std::size_t total = 0;
    for (const auto& inst : instances()) total += inst->memory_bytes();
    return total;
}

std::size_t SketchCache::serialized_bytes() const {
    std::size_t total = 0;
    for (const auto& inst : instances()) total += inst->serialized_bytes();
    return total;
}

void SketchCache::save_snapshot(const std::string& path) const {
    ByteWriter out;
    out.put_bytes(std::span(reinterpret_cast<const std::uint8_t*>(kSnapshotMagic), 4));
    out.put<std::uint32_t>(kSnapshotVersion);
    for (const auto& inst : instances()) {
        ByteWriter rec;
        const auto& id = inst->series();
        rec.put_string(id.metric_name);
        rec.put_varint(id.labels.size());
        for (const auto& [n, v] : id.labels) {
            rec.put_string(n);
            rec.put_string(v);
        }
        rec.put<std::uint8_t>(static_cast<std::uint8_t>(inst->family()));
        inst->read([&](const CacheInstance::View& v) {
            rec.put<std::uint8_t>(v.has_data);
            rec.put<std::int64_t>(v.first_ts);
            rec.put<std::int64_t>(v.last_ts);
            rec.put<std::int64_t>(v.coverage_start);
            std::visit([&](const auto& p) { p.serialize(rec); }, v.payload);
            return 0;
        });
        out.put<std::uint64_t>(rec.size());
        out.put_bytes(rec.bytes());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::kInvalidArgument, "cannot open snapshot for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.bytes().data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error(ErrorCode::kInvalidArgument, "snapshot write failed: " + path);
}

std::size_t SketchCache::load_snapshot(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::kInvalidArgument, "cannot open snapshot: " + path);
    const std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    ByteReader in(data);
    const auto magic = in.get_bytes(4);
    if (std::memcmp(magic.data(), kSnapshotMagic, 4) != 0) throw Error(ErrorCode::kCorruptData, "not a snapshot file");
    if (in.get<std::uint32_t>() != kSnapshotVersion) throw Error(ErrorCode::kCorruptData, "unsupported snapshot version");
    std::size_t restored = 0;
    std::unique_lock lock(mu_);
    while (!in.done()) {
        const auto len = in.get<std::uint64_t>();
        ByteReader rec(in.get_bytes(static_cast<std::size_t>(len)));
        std::string metric = rec.get_string();
        std::vector<Label> labels(rec.get_varint());
        for (auto& [n, v] : labels) {
            n = rec.get_string();
            v = rec.get_string();
        }
        const auto series = canonicalize(std::move(metric), std::move(labels));
        const auto fam = rec.get<std::uint8_t>();
        if (fam > static_cast<std::uint8_t>(Family::kSample)) throw Error(ErrorCode::kCorruptData, "bad family");
        const auto family = static_cast<Family>(fam);
        auto it = instances_.find(Key{series.canonical_id, family});
        if (it == instances_.end() && !store_.contains(series.canonical_id)) {
            // A series not seen since restart: attach it to the registered rules as ingestion would.
            store_.ensure(series);
            for (const auto& [id, rule] : rules_)
                if (rule.expr.selector.matches(series)) attach(series, id, rule, nullptr);
            it = instances_.find(Key{series.canonical_id, family});
        }
        if (it == instances_.end()) continue;
        const bool has_data = rec.get<std::uint8_t>() != 0;
        const auto first = rec.get<std::int64_t>();
        const auto last = rec.get<std::int64_t>();
        const auto coverage = rec.get<std::int64_t>();
        CacheInstance::Payload payload = [&]() -> CacheInstance::Payload {
            switch (family) {
                case Family::kQuantile:
                    return EhKll::deserialize(rec, config_.quantile);
                case Family::kGsum:
                    return EhUniv::deserialize(rec, config_.gsum);
                case Family::kSample:
                    break;
            }
            return SampleWindow::deserialize(rec);
        }();
        auto& inst = *it->second;
        std::unique_lock ilock(inst.mu_);
        std::visit([&](auto& p) { p.set_span(inst.max_window_); }, payload);
        inst.payload_ = std::move(payload);
        inst.has_data_ = has_data;
        inst.first_ts_ = first;
        inst.last_ts_ = last;
        inst.coverage_start_ = coverage;
        ++restored;
    }
    return restored;
}

}  // namespace promsketch
