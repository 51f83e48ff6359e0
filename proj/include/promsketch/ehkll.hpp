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

#ifndef PROMSKETCH_EHKLL_HPP
#define PROMSKETCH_EHKLL_HPP

#include "promsketch/bytes.hpp"
#include "promsketch/eh_window.hpp"
#include "promsketch/kll.hpp"

namespace promsketch {

struct KllBucketTraits {
    struct Item {
        double value;
        std::uint64_t seq;  // arrival number, seeds the bucket's compaction coin
    };
    using Payload = KllSketch;

    int k = 256;
    std::uint64_t seed = 0;

    KllSketch make(const Item& item) const {
        KllSketch s(k, seeded_hash(item.seq, seed));
        s.update(item.value);
        return s;
    }
    double metric(const KllSketch& s) const { return static_cast<double>(s.count()); }
    double union_metric(const KllSketch& a, const KllSketch& b) const { return metric(a) + metric(b); }
    void merge(KllSketch& older, const KllSketch& newer) const { older.merge(newer); }
    std::size_t memory_usage(const KllSketch& s) const noexcept { return s.memory_usage(); }
};

/// Sub-window quantiles: count-regime exponential histogram of KLL sketches.
class EhKll {
  public:
    EhKll(const SketchConfig& config, Timestamp span_ms);

    /// Throws OutOfOrder for t older than the newest insert, InvalidArgument for non-finite v.
    void insert(Timestamp t, double v);

    struct Merged {
        KllSketch sketch;
        EhSelection selection;
        std::uint64_t suffix_count = 0;  // approximate N_{t1}: samples in included buckets and newer
    };
    /// Merges the buckets that answer q (QueryOutsideWindow, EmptyWindow, EmptyRange).
    Merged merged(const TimeWindow& q) const;
    double query(const TimeWindow& q, double phi) const;

    /// Normalized rank error bound against the suffix (t1, now]: 2/k_eh + eps_kll.
    double suffix_rank_bound() const;

    const EhWindow<KllBucketTraits>& window() const noexcept { return window_; }
    void set_span(Timestamp span_ms) { window_.set_span(span_ms); }
    Timestamp now() const noexcept { return window_.now(); }
    const SketchConfig& config() const noexcept { return config_; }

    /// Serialized payload size in bytes (the instance memory figure).
    std::size_t serialized_size() const;
    /// Estimated heap bytes (the figure the cache reports as instance memory).
    std::size_t memory_usage() const noexcept { return window_.memory_usage(); }
    void serialize(ByteWriter& out) const;
    static EhKll deserialize(ByteReader& in, const SketchConfig& config);

  private:
    SketchConfig config_;
    EhWindow<KllBucketTraits> window_;
    std::uint64_t seq_ = 0;
};

}  // namespace promsketch

#endif  // PROMSKETCH_EHKLL_HPP
