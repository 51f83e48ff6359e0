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

#ifndef PROMSKETCH_EHUNIV_HPP
#define PROMSKETCH_EHUNIV_HPP

#include <optional>
#include <utility>
#include <vector>

#include "promsketch/bytes.hpp"
#include "promsketch/eh_window.hpp"
#include "promsketch/univ.hpp"

namespace promsketch {

/// Bucket payload for GSum windows: an exact frequency map while small, a universal sketch after.
class UnivBucketPayload {
  public:
    enum class Mode { kMap, kSketch };
    using Entry = std::pair<Token, std::uint64_t>;

    /// Bytes charged per map entry when deciding the map/sketch switch.
    static constexpr std::size_t kMapEntryBytes = 16;

    UnivBucketPayload() = default;
    static UnivBucketPayload single(Token t, std::uint64_t w = 1);
    /// Takes ownership of token-sorted, token-unique entries.
    static UnivBucketPayload from_map(std::vector<Entry> entries);

    /// Adds w occurrences of t; converts to a sketch once the map exceeds threshold_bytes.
    void add(Token t, std::uint64_t w, const SketchConfig& config, std::size_t threshold_bytes);
    /// Folds other into this payload. A map result over threshold_bytes becomes a sketch;
    /// threshold_bytes = 0 never converts (query-time merges).
    void merge(const UnivBucketPayload& other, const SketchConfig& config, std::size_t threshold_bytes);
    void convert_to_sketch(const SketchConfig& config);

    /// f(A u B) = L2^2 of the union: exact for two maps, otherwise a + b + 2 <a, b> estimated
    /// through the sketch, floored at a + b.
    static double union_l2sq(const UnivBucketPayload& a, const UnivBucketPayload& b);

    Mode mode() const noexcept { return sketch_ ? Mode::kSketch : Mode::kMap; }
    const std::vector<Entry>& map() const noexcept { return map_; }
    const UnivSketch& sketch() const { return *sketch_; }
    double l2sq() const noexcept { return l2sq_; }
    std::uint64_t total() const noexcept { return total_; }
    std::size_t map_bytes() const noexcept { return map_.size() * kMapEntryBytes; }

    /// Exact over the map, recursive estimate over the sketch. L2 is the root of L2^2.
    double gsum(GsumStat stat) const;
    /// Ordered by frequency (descending), ties by smaller token.
    std::vector<std::pair<Token, double>> topk(std::size_t k) const;
    double estimate(Token t) const;

    std::size_t serialized_size() const;
    std::size_t memory_usage() const noexcept { return memory::of(map_) + (sketch_ ? sketch_->memory_usage() : 0); }
    void serialize(ByteWriter& out) const;
    static UnivBucketPayload deserialize(ByteReader& in);

  private:
    void replay_into_sketch(const std::vector<Entry>& entries);

    std::vector<Entry> map_;
    std::optional<UnivSketch> sketch_;
    double l2sq_ = 0.0;
    std::uint64_t total_ = 0;
};

struct UnivBucketTraits {
    using Item = Token;
    using Payload = UnivBucketPayload;

    SketchConfig config;
    std::size_t threshold_bytes = 0;

    UnivBucketPayload make(Token t) const { return UnivBucketPayload::single(t); }
    double metric(const UnivBucketPayload& p) const { return p.l2sq(); }
    double union_metric(const UnivBucketPayload& a, const UnivBucketPayload& b) const {
        return UnivBucketPayload::union_l2sq(a, b);
    }
    std::size_t memory_usage(const UnivBucketPayload& p) const noexcept { return p.memory_usage(); }
    void merge(UnivBucketPayload& older, const UnivBucketPayload& newer) const {
        older.merge(newer, config, threshold_bytes);
    }
};

/// Sub-window GSum statistics: L2^2-regime exponential histogram of hybrid map/sketch buckets.
class EhUniv {
  public:
    EhUniv(const SketchConfig& config, Timestamp span_ms);

    void insert(Timestamp t, Token token);

    struct Merged {
        UnivBucketPayload payload;
        EhSelection selection;
    };
    /// Map buckets are combined into one map first, then replayed into the merged sketch (if any).
    Merged merged(const TimeWindow& q) const;
    double query(const TimeWindow& q, GsumStat stat) const;
    std::vector<std::pair<Token, double>> topk(const TimeWindow& q, std::size_t k) const;

    /// Map payloads above this many bytes become sketches.
    std::size_t map_threshold() const noexcept { return window_.traits().threshold_bytes; }

    const EhWindow<UnivBucketTraits>& window() const noexcept { return window_; }
    void set_span(Timestamp span_ms) { window_.set_span(span_ms); }
    Timestamp now() const noexcept { return window_.now(); }
    const SketchConfig& config() const noexcept { return window_.traits().config; }

    std::size_t serialized_size() const;
    std::size_t memory_usage() const noexcept { return window_.memory_usage(); }
    void serialize(ByteWriter& out) const;
    static EhUniv deserialize(ByteReader& in, const SketchConfig& config);

  private:
    EhWindow<UnivBucketTraits> window_;
};

}  // namespace promsketch

#endif  // PROMSKETCH_EHUNIV_HPP
