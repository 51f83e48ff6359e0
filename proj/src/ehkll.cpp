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

#include "promsketch/ehkll.hpp"

#include <cmath>

namespace promsketch {

namespace {

constexpr std::size_t kBucketHeaderBytes = 3 * sizeof(std::int64_t);

}  // namespace

EhKll::EhKll(const SketchConfig& config, Timestamp span_ms)
    : config_(config), window_(EhRegime::kCount, config.k_eh, span_ms, KllBucketTraits{config.k_kll, config.seed}) {
    config_.validate();
}

void EhKll::insert(Timestamp t, double v) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "non-finite sample value");
    window_.insert(t, KllBucketTraits::Item{v, seq_++});
}

EhKll::Merged EhKll::merged(const TimeWindow& q) const {
    const EhSelection sel = window_.select(q);
    return {window_.merge_selection(sel), sel, window_.suffix_count(sel.first)};
}

double EhKll::query(const TimeWindow& q, double phi) const {
    if (!(phi >= 0.0 && phi <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "phi outside [0, 1]");
    return merged(q).sketch.quantile(phi);
}

double EhKll::suffix_rank_bound() const { return 2.0 / config_.k_eh + kll_rank_epsilon(config_.k_kll); }

std::size_t EhKll::serialized_size() const {
    std::size_t total = 4 * sizeof(std::int64_t);
    for (const auto& b : window_.buckets()) total += kBucketHeaderBytes + b.summary.serialized_size();
    return total;
}

void EhKll::serialize(ByteWriter& out) const {
    out.put<std::int64_t>(window_.span());
    out.put<std::int64_t>(window_.has_data() ? window_.now() : -1);
    out.put<std::uint64_t>(seq_);
    out.put<std::uint64_t>(window_.bucket_count());
    for (const auto& b : window_.buckets()) {
        out.put<std::int64_t>(b.oldest_ts);
        out.put<std::int64_t>(b.newest_ts);
        out.put<std::uint64_t>(b.count);
        b.summary.serialize(out);
    }
}

EhKll EhKll::deserialize(ByteReader& in, const SketchConfig& config) {
    const auto span = in.get<std::int64_t>();
    const auto now = in.get<std::int64_t>();
    if (span <= 0) throw Error(ErrorCode::kCorruptData, "bad window span");
    EhKll out(config, span);
    out.seq_ = in.get<std::uint64_t>();
    const auto count = in.get<std::uint64_t>();
    std::deque<EhBucket<KllSketch>> buckets;
    for (std::uint64_t i = 0; i < count; ++i) {
        EhBucket<KllSketch> b;
        b.oldest_ts = in.get<std::int64_t>();
        b.newest_ts = in.get<std::int64_t>();
        b.count = in.get<std::uint64_t>();
        b.summary = KllSketch::deserialize(in);
        if (b.summary.count() != b.count || b.summary.k() != config.k_kll)
            throw Error(ErrorCode::kCorruptData, "bucket does not match its sketch");
        b.size_metric = static_cast<double>(b.count);
        buckets.push_back(std::move(b));
    }
    out.window_.restore(now < 0 ? 0 : now, now >= 0, std::move(buckets));
    return out;
}

}  // namespace promsketch
