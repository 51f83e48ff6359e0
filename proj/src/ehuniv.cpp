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

#include "promsketch/ehuniv.hpp"

#include <algorithm>
#include <cmath>

namespace promsketch {

namespace {

using Entry = UnivBucketPayload::Entry;

std::vector<Entry> merge_maps(const std::vector<Entry>& a, const std::vector<Entry>& b) {
    std::vector<Entry> out;
    out.reserve(a.size() + b.size());
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i].first < b[j].first) {
            out.push_back(a[i++]);
        } else if (b[j].first < a[i].first) {
            out.push_back(b[j++]);
        } else {
            out.emplace_back(a[i].first, a[i].second + b[j].second);
            ++i;
            ++j;
        }
    }
    out.insert(out.end(), a.begin() + static_cast<std::ptrdiff_t>(i), a.end());
    out.insert(out.end(), b.begin() + static_cast<std::ptrdiff_t>(j), b.end());
    return out;
}

double map_l2sq(const std::vector<Entry>& m) {
    double acc = 0.0;
    for (const auto& [t, f] : m) acc += static_cast<double>(f) * static_cast<double>(f);
    return acc;
}

double map_inner(const std::vector<Entry>& a, const std::vector<Entry>& b) {
    double acc = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i].first < b[j].first) {
            ++i;
        } else if (b[j].first < a[i].first) {
            ++j;
        } else {
            acc += static_cast<double>(a[i].second) * static_cast<double>(b[j].second);
            ++i;
            ++j;
        }
    }
    return acc;
}

double map_sketch_inner(const std::vector<Entry>& m, const UnivSketch& s) {
    double acc = 0.0;
    for (const auto& [t, f] : m) acc += static_cast<double>(f) * s.estimate(t);
    return acc;
}

}  // namespace

UnivBucketPayload UnivBucketPayload::single(Token t, std::uint64_t w) {
    if (w == 0) throw Error(ErrorCode::kInvalidArgument, "zero weight");
    UnivBucketPayload p;
    p.map_.emplace_back(t, w);
    p.l2sq_ = static_cast<double>(w) * static_cast<double>(w);
    p.total_ = w;
    return p;
}

UnivBucketPayload UnivBucketPayload::from_map(std::vector<Entry> entries) {
    UnivBucketPayload p;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].second == 0) throw Error(ErrorCode::kInvalidArgument, "zero count in frequency map");
        if (i > 0 && entries[i - 1].first >= entries[i].first)
            throw Error(ErrorCode::kInvalidArgument, "frequency map not sorted by token");
        p.total_ += entries[i].second;
    }
    p.map_ = std::move(entries);
    p.l2sq_ = map_l2sq(p.map_);
    return p;
}

void UnivBucketPayload::replay_into_sketch(const std::vector<Entry>& entries) {
    for (const auto& [t, f] : entries) {
        const double w = static_cast<double>(f);
        const double after = sketch_->update(t, static_cast<std::int64_t>(f));
        l2sq_ += 2.0 * w * (after - w) + w * w;
        total_ += f;
    }
}

void UnivBucketPayload::convert_to_sketch(const SketchConfig& config) {
    if (sketch_) return;
    sketch_.emplace(config);
    const double exact = l2sq_;
    const std::uint64_t total = total_;
    total_ = 0;
    replay_into_sketch(map_);
    // The map knew f(B) exactly; keep it rather than the replayed running value.
    l2sq_ = exact;
    total_ = total;
    map_.clear();
    map_.shrink_to_fit();
}

void UnivBucketPayload::add(Token t, std::uint64_t w, const SketchConfig& config, std::size_t threshold_bytes) {
    if (w == 0) throw Error(ErrorCode::kInvalidArgument, "zero weight");
    if (sketch_) {
        replay_into_sketch({{t, w}});
        return;
    }
    auto it = std::lower_bound(map_.begin(), map_.end(), t, [](const Entry& e, Token key) { return e.first < key; });
    const double wd = static_cast<double>(w);
    if (it != map_.end() && it->first == t) {
        l2sq_ += 2.0 * wd * static_cast<double>(it->second) + wd * wd;
        it->second += w;
    } else {
        map_.insert(it, {t, w});
        l2sq_ += wd * wd;
    }
    total_ += w;
    if (threshold_bytes > 0 && map_bytes() > threshold_bytes) convert_to_sketch(config);
}

void UnivBucketPayload::merge(const UnivBucketPayload& other, const SketchConfig& config, std::size_t threshold_bytes) {
    if (other.total_ == 0 && !other.sketch_) return;
    if (total_ == 0 && !sketch_) {
        *this = other;
        return;
    }
    if (!sketch_ && !other.sketch_) {
        l2sq_ = l2sq_ + other.l2sq_ + 2.0 * map_inner(map_, other.map_);
        map_ = merge_maps(map_, other.map_);
        total_ += other.total_;
        if (threshold_bytes > 0 && map_bytes() > threshold_bytes) convert_to_sketch(config);
        return;
    }
    if (sketch_ && other.sketch_) {
        if (!sketch_->compatible(*other.sketch_)) throw Error(ErrorCode::kMismatchedConfig, "bucket sketches differ in shape or seed");
        const double a = l2sq_;
        const double b = other.l2sq_;
        l2sq_ = std::max(a + b, a + b + 2.0 * sketch_->inner_product(*other.sketch_));
        sketch_->merge(*other.sketch_);
        total_ += other.total_;
        return;
    }
    if (sketch_) {
        replay_into_sketch(other.map_);
        return;
    }
    // This side is a map, the other a sketch: start from a copy of the sketch and replay ours.
    std::vector<Entry> mine = std::move(map_);
    map_.clear();
    sketch_ = other.sketch_;
    l2sq_ = other.l2sq_;
    total_ = other.total_;
    replay_into_sketch(mine);
}

double UnivBucketPayload::union_l2sq(const UnivBucketPayload& a, const UnivBucketPayload& b) {
    const double base = a.l2sq_ + b.l2sq_;
    double cross = 0.0;
    if (!a.sketch_ && !b.sketch_) return base + 2.0 * map_inner(a.map_, b.map_);
    if (a.sketch_ && b.sketch_)
        cross = a.sketch_->inner_product(*b.sketch_);
    else if (a.sketch_)
        cross = map_sketch_inner(b.map_, *a.sketch_);
    else
        cross = map_sketch_inner(a.map_, *b.sketch_);
    return std::max(base, base + 2.0 * cross);
}

double UnivBucketPayload::gsum(GsumStat stat) const {
    if (total_ == 0) throw Error(ErrorCode::kEmptySketch, "empty bucket payload");
    if (sketch_) return sketch_->gsum(stat);
    switch (stat) {
        case GsumStat::kL0:
            return static_cast<double>(map_.size());
        case GsumStat::kL1:
            return static_cast<double>(total_);
        case GsumStat::kL2:
            return std::sqrt(map_l2sq(map_));
        case GsumStat::kEntropy: {
            const double n = static_cast<double>(total_);
            double acc = 0.0;
            for (const auto& [t, f] : map_) {
                const double x = static_cast<double>(f);
                acc += x * std::log2(x);
            }
            return std::max(0.0, std::log2(n) - acc / n);
        }
    }
    throw Error(ErrorCode::kInvalidArgument, "unknown statistic");
}

std::vector<std::pair<Token, double>> UnivBucketPayload::topk(std::size_t k) const {
    if (k == 0) throw Error(ErrorCode::kInvalidArgument, "topk needs k >= 1");
    if (sketch_) return sketch_->topk(k);
    std::vector<Entry> sorted = map_;
    std::stable_sort(sorted.begin(), sorted.end(), [](const Entry& a, const Entry& b) { return a.second > b.second; });
    if (sorted.size() > k) sorted.resize(k);
    std::vector<std::pair<Token, double>> out;
    out.reserve(sorted.size());
    for (const auto& [t, f] : sorted) out.emplace_back(t, static_cast<double>(f));
    return out;
}

double UnivBucketPayload::estimate(Token t) const {
    if (sketch_) return sketch_->estimate(t);
    auto it = std::lower_bound(map_.begin(), map_.end(), t, [](const Entry& e, Token key) { return e.first < key; });
    return it != map_.end() && it->first == t ? static_cast<double>(it->second) : 0.0;
}

// Map entries are written as token deltas and counts, both varint coded.
void UnivBucketPayload::serialize(ByteWriter& out) const {
    out.put<std::uint8_t>(sketch_ ? 1 : 0);
    if (sketch_) {
        out.put<double>(l2sq_);
        sketch_->serialize(out);
        return;
    }
    out.put_varint(map_.size());
    Token prev = 0;
    for (const auto& [t, f] : map_) {
        out.put_varint(t - prev);
        out.put_varint(f);
        prev = t;
    }
}

std::size_t UnivBucketPayload::serialized_size() const {
    if (sketch_) return 1 + sizeof(double) + sketch_->serialized_size();
    auto varint_len = [](std::uint64_t v) {
        std::size_t n = 1;
        while (v >= 0x80) {
            v >>= 7;
            ++n;
        }
        return n;
    };
    std::size_t n = 1 + varint_len(map_.size());
    Token prev = 0;
    for (const auto& [t, f] : map_) {
        n += varint_len(t - prev) + varint_len(f);
        prev = t;
    }
    return n;
}

UnivBucketPayload UnivBucketPayload::deserialize(ByteReader& in) {
    const auto mode = in.get<std::uint8_t>();
    UnivBucketPayload p;
    if (mode == 1) {
        p.l2sq_ = in.get<double>();
        p.sketch_ = UnivSketch::deserialize(in);
        p.total_ = p.sketch_->total();
        return p;
    }
    if (mode != 0) throw Error(ErrorCode::kCorruptData, "unknown payload mode");
    const auto count = in.get_varint();
    std::vector<Entry> entries;
    entries.reserve(std::min<std::uint64_t>(count, 1u << 20));
    Token prev = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        const Token t = prev + in.get_varint();
        if (i > 0 && t <= prev) throw Error(ErrorCode::kCorruptData, "map tokens not increasing");
        entries.emplace_back(t, in.get_varint());
        prev = t;
    }
    try {
        return from_map(std::move(entries));
    } catch (const Error& e) {
        throw Error(ErrorCode::kCorruptData, e.what());
    }
}

EhUniv::EhUniv(const SketchConfig& config, Timestamp span_ms)
    : window_(EhRegime::kL2sq, config.k_eh, span_ms,
              UnivBucketTraits{config, config.map_threshold_bytes > 0 ? config.map_threshold_bytes
                                                                      : UnivSketch::base_serialized_size(config)}) {
    config.validate();
}

void EhUniv::insert(Timestamp t, Token token) { window_.insert(t, token); }

EhUniv::Merged EhUniv::merged(const TimeWindow& q) const {
    const EhSelection sel = window_.select(q);
    const auto& buckets = window_.buckets();
    std::vector<Entry> entries;
    const UnivBucketPayload* first_sketch = nullptr;
    std::vector<const UnivBucketPayload*> sketches;
    for (std::size_t i = sel.first; i <= sel.last; ++i) {
        const auto& p = buckets[i].summary;
        if (p.mode() == UnivBucketPayload::Mode::kSketch) {
            if (!first_sketch)
                first_sketch = &p;
            else
                sketches.push_back(&p);
        } else {
            entries.insert(entries.end(), p.map().begin(), p.map().end());
        }
    }
    std::sort(entries.begin(), entries.end());
    std::vector<Entry> combined;
    for (const auto& e : entries) {
        if (!combined.empty() && combined.back().first == e.first)
            combined.back().second += e.second;
        else
            combined.push_back(e);
    }
    UnivBucketPayload map_part = UnivBucketPayload::from_map(std::move(combined));
    if (!first_sketch) return {std::move(map_part), sel};
    UnivBucketPayload out = *first_sketch;
    for (const auto* p : sketches) out.merge(*p, config(), 0);
    out.merge(map_part, config(), 0);
    return {std::move(out), sel};
}

double EhUniv::query(const TimeWindow& q, GsumStat stat) const { return merged(q).payload.gsum(stat); }

std::vector<std::pair<Token, double>> EhUniv::topk(const TimeWindow& q, std::size_t k) const {
    return merged(q).payload.topk(k);
}

std::size_t EhUniv::serialized_size() const {
    std::size_t total = 3 * sizeof(std::int64_t);
    for (const auto& b : window_.buckets()) total += 3 * sizeof(std::int64_t) + b.summary.serialized_size();
    return total;
}

void EhUniv::serialize(ByteWriter& out) const {
    out.put<std::int64_t>(window_.span());
    out.put<std::int64_t>(window_.has_data() ? window_.now() : -1);
    out.put<std::uint64_t>(window_.bucket_count());
    for (const auto& b : window_.buckets()) {
        out.put<std::int64_t>(b.oldest_ts);
        out.put<std::int64_t>(b.newest_ts);
        out.put<std::uint64_t>(b.count);
        b.summary.serialize(out);
    }
}

EhUniv EhUniv::deserialize(ByteReader& in, const SketchConfig& config) {
    const auto span = in.get<std::int64_t>();
    const auto now = in.get<std::int64_t>();
    if (span <= 0) throw Error(ErrorCode::kCorruptData, "bad window span");
    EhUniv out(config, span);
    const auto count = in.get<std::uint64_t>();
    std::deque<EhBucket<UnivBucketPayload>> buckets;
    for (std::uint64_t i = 0; i < count; ++i) {
        EhBucket<UnivBucketPayload> b;
        b.oldest_ts = in.get<std::int64_t>();
        b.newest_ts = in.get<std::int64_t>();
        b.count = in.get<std::uint64_t>();
        b.summary = UnivBucketPayload::deserialize(in);
        if (b.summary.total() != b.count) throw Error(ErrorCode::kCorruptData, "bucket does not match its payload");
        b.size_metric = b.summary.l2sq();
        buckets.push_back(std::move(b));
    }
    out.window_.restore(now < 0 ? 0 : now, now >= 0, std::move(buckets));
    return out;
}

}  // namespace promsketch
