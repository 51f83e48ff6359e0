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

#ifndef PROMSKETCH_EH_WINDOW_HPP
#define PROMSKETCH_EH_WINDOW_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "promsketch/core.hpp"
#include "promsketch/memory.hpp"

namespace promsketch {

enum class EhRegime { kCount, kL2sq };

/// Weak-additivity constant for L2^2 (f(A u B) <= 2 (f(A) + f(B))).
inline constexpr double kL2sqWeakAdditivity = 2.0;

template <typename Payload>
struct EhBucket {
    Timestamp oldest_ts = 0;
    Timestamp newest_ts = 0;
    std::uint64_t count = 0;   // samples folded into this bucket
    double size_metric = 0.0;  // COUNT: count; L2SQ: f(B) = L2^2
    Payload summary;
    std::uint64_t id = 0;
    // Cached f(previous bucket u this bucket); valid while prev_id matches the older neighbour.
    std::uint64_t prev_id = 0;
    double union_metric = -1.0;
};

/// Buckets [first, last] (inclusive, oldest-first indices) answer the query. A single straddling
/// bucket that contains both endpoints is reported with single_bucket set.
struct EhSelection {
    std::size_t first = 0;
    std::size_t last = 0;
    bool single_bucket = false;
};

/**
 * Exponential histogram over a mergeable summary. Traits provides:
 *   using Payload; using Item;
 *   Payload make(const Item&) const;
 *   double metric(const Payload&) const;                 // f(B)
 *   double union_metric(const Payload&, const Payload&) const;   // f(A u B), L2SQ only
 *   void merge(Payload& older, const Payload& newer) const;   // older absorbs newer
 *
 * Buckets are kept oldest first.
 */
template <typename Traits>
class EhWindow {
  public:
    using Payload = typename Traits::Payload;
    using Item = typename Traits::Item;
    using Bucket = EhBucket<Payload>;

    EhWindow(EhRegime regime, int k_eh, Timestamp span_ms, Traits traits = Traits{})
        : regime_(regime), k_(k_eh), span_(span_ms), traits_(std::move(traits)) {
        if (k_eh <= 0) throw Error(ErrorCode::kInvalidArgument, "k_eh must be positive");
        if (span_ms <= 0) throw Error(ErrorCode::kInvalidArgument, "window span must be positive");
    }

    void insert(Timestamp t, const Item& item) {
        if (t < 0) throw Error(ErrorCode::kInvalidArgument, "negative timestamp");
        if (has_data_ && t < now_)
            throw Error(ErrorCode::kOutOfOrder, "timestamp " + std::to_string(t) + " precedes " + std::to_string(now_));
        now_ = t;
        has_data_ = true;
        Bucket b;
        b.oldest_ts = b.newest_ts = t;
        b.count = 1;
        b.summary = traits_.make(item);
        b.size_metric = traits_.metric(b.summary);
        b.id = ++next_id_;
        buckets_.push_back(std::move(b));
        total_count_ += 1;
        if (regime_ == EhRegime::kCount) {
            bump_class(0, +1);
            cascade_count();
        } else {
            compact_l2sq();
        }
        expire();
    }

    /// Moves the clock forward without inserting (drops expired buckets).
    void advance(Timestamp now) {
        if (has_data_ && now < now_) throw Error(ErrorCode::kOutOfOrder, "clock moved backwards");
        now_ = now;
        has_data_ = true;
        expire();
    }

    EhSelection select(const TimeWindow& q) const {
        if (q.end > now_ || q.start < now_ - span_)
            throw Error(ErrorCode::kQueryOutsideWindow, "query (" + std::to_string(q.start) + ", " + std::to_string(q.end) +
                                                             "] outside retained window ending at " + std::to_string(now_));
        if (buckets_.empty()) throw Error(ErrorCode::kEmptyWindow, "no buckets retained");
        // First included: oldest bucket lying wholly after q.start.
        std::size_t lo = 0, hi = buckets_.size();
        while (lo < hi) {
            std::size_t mid = (lo + hi) / 2;
            if (buckets_[mid].oldest_ts > q.start)
                hi = mid;
            else
                lo = mid + 1;
        }
        const std::size_t first = lo;
        // Last included: newest bucket starting at or before q.end (it may straddle q.end).
        lo = 0;
        hi = buckets_.size();
        while (lo < hi) {
            std::size_t mid = (lo + hi) / 2;
            if (buckets_[mid].oldest_ts <= q.end)
                lo = mid + 1;
            else
                hi = mid;
        }
        if (lo == 0) throw Error(ErrorCode::kEmptyRange, "no samples at or before query end");
        const std::size_t last = lo - 1;
        if (first <= last) return {first, last, false};
        // Both endpoints fall inside bucket `last`, which started at or before q.start.
        if (buckets_[last].newest_ts <= q.start) throw Error(ErrorCode::kEmptyRange, "no samples inside query window");
        return {last, last, true};
    }

    Payload merge_range(std::size_t first, std::size_t last) const {
        if (first > last || last >= buckets_.size()) throw Error(ErrorCode::kInvalidArgument, "bad bucket range");
        Payload out = buckets_[first].summary;
        for (std::size_t i = first + 1; i <= last; ++i) traits_.merge(out, buckets_[i].summary);
        return out;
    }

    Payload merge_selection(const EhSelection& s) const { return merge_range(s.first, s.last); }

    /// Sum of bucket counts over [first, end): approximate N_{t} for error annotations.
    std::uint64_t suffix_count(std::size_t first) const {
        std::uint64_t total = 0;
        for (std::size_t i = first; i < buckets_.size(); ++i) total += buckets_[i].count;
        return total;
    }

    const std::deque<Bucket>& buckets() const noexcept { return buckets_; }
    std::size_t bucket_count() const noexcept { return buckets_.size(); }
    bool empty() const noexcept { return buckets_.empty(); }
    Timestamp now() const noexcept { return now_; }
    bool has_data() const noexcept { return has_data_; }
    Timestamp span() const noexcept { return span_; }
    void set_span(Timestamp span_ms) {
        if (span_ms <= 0) throw Error(ErrorCode::kInvalidArgument, "window span must be positive");
        span_ = span_ms;
    }
    int k() const noexcept { return k_; }
    EhRegime regime() const noexcept { return regime_; }
    std::uint64_t total_count() const noexcept { return total_count_; }
    std::uint64_t merge_operations() const noexcept { return merges_; }
    /// Bucket storage plus each summary's heap, as reported by Traits::memory_usage.
    std::size_t memory_usage() const noexcept {
        std::size_t total = memory::of(buckets_) + memory::of(class_counts_);
        for (const auto& b : buckets_) total += traits_.memory_usage(b.summary);
        return total;
    }
    const Traits& traits() const noexcept { return traits_; }

    /// Restores raw state (snapshot loading). Buckets must be oldest first.
    void restore(Timestamp now, bool has_data, std::deque<Bucket> buckets) {
        buckets_ = std::move(buckets);
        now_ = now;
        has_data_ = has_data;
        total_count_ = 0;
        class_counts_.clear();
        for (auto& b : buckets_) {
            b.id = ++next_id_;
            b.prev_id = 0;
            b.union_metric = -1.0;
            total_count_ += b.count;
            if (regime_ == EhRegime::kCount) bump_class(exponent_of(b.count), +1);
        }
    }

  private:
    static int exponent_of(std::uint64_t size) { return std::countr_zero(size); }

    void bump_class(int e, int delta) {
        if (static_cast<std::size_t>(e) >= class_counts_.size()) class_counts_.resize(e + 1, 0);
        class_counts_[e] += delta;
    }

    void merge_at(std::size_t older) {
        Bucket& a = buckets_[older];
        Bucket& b = buckets_[older + 1];
        const double merged_metric = regime_ == EhRegime::kL2sq && b.prev_id == a.id && b.union_metric >= 0.0
                                         ? b.union_metric
                                         : -1.0;
        traits_.merge(a.summary, b.summary);
        a.newest_ts = b.newest_ts;
        a.count += b.count;
        a.size_metric = merged_metric >= 0.0 ? merged_metric : traits_.metric(a.summary);
        a.id = ++next_id_;
        // a's cached union with its older neighbour described the old contents.
        a.prev_id = 0;
        a.union_metric = -1.0;
        buckets_.erase(buckets_.begin() + static_cast<std::ptrdiff_t>(older) + 1);
        ++merges_;
    }

    // COUNT: sizes are powers of two, nonincreasing from oldest to newest. When a size class holds
    // more than ceil(k/2) + 1 buckets, its two oldest merge into one bucket of the next class.
    void cascade_count() {
        const std::size_t limit = static_cast<std::size_t>((k_ + 1) / 2) + 1;
        int e = 0;
        while (static_cast<std::size_t>(e) < class_counts_.size() && static_cast<std::size_t>(class_counts_[e]) > limit) {
            std::size_t newer_count = 0;
            for (int s = 0; s < e; ++s) newer_count += class_counts_[s];
            // Class e occupies the run ending newer_count buckets before the back.
            const std::size_t run_end = buckets_.size() - newer_count;  // one past the newest of class e
            const std::size_t oldest = run_end - static_cast<std::size_t>(class_counts_[e]);
            merge_at(oldest);
            bump_class(e, -2);
            bump_class(e + 1, +1);
            ++e;
        }
    }

    // L2SQ: one pass newest to oldest. Pair (j-1, j) merges when the merged bucket would still
    // satisfy f(B) <= (C_f / k) * (sum of f over newer buckets).
    void compact_l2sq() {
        if (buckets_.size() < 3) return;
        const double factor = kL2sqWeakAdditivity / static_cast<double>(k_);
        double newer = buckets_.back().size_metric;
        std::size_t j = buckets_.size() - 2;  // newer bucket of the pair under test
        while (j >= 1) {
            Bucket& a = buckets_[j - 1];
            Bucket& b = buckets_[j];
            const double bound = factor * newer;
            const double lo = a.size_metric + b.size_metric;
            bool merge = false;
            if (lo <= bound) {
                const double hi = lo + 2.0 * std::sqrt(a.size_metric * b.size_metric);
                if (hi <= bound) {
                    merge = true;
                } else {
                    if (b.prev_id != a.id || b.union_metric < 0.0) {
                        b.union_metric = traits_.union_metric(a.summary, b.summary);
                        b.prev_id = a.id;
                    }
                    merge = b.union_metric <= bound;
                }
            }
            if (merge) {
                merge_at(j - 1);
                // The merged bucket now sits at j - 1; test it against its older neighbour.
            } else {
                newer += b.size_metric;
            }
            --j;
        }
    }

    void expire() {
        const Timestamp cutoff = now_ - span_;
        while (!buckets_.empty() && buckets_.front().newest_ts <= cutoff) {
            total_count_ -= buckets_.front().count;
            if (regime_ == EhRegime::kCount) bump_class(exponent_of(buckets_.front().count), -1);
            buckets_.pop_front();
        }
    }

    EhRegime regime_;
    int k_;
    Timestamp span_;
    Traits traits_;
    std::deque<Bucket> buckets_;
    std::vector<int> class_counts_;  // COUNT regime: buckets per size exponent
    Timestamp now_ = 0;
    bool has_data_ = false;
    std::uint64_t total_count_ = 0;
    std::uint64_t next_id_ = 0;
    std::uint64_t merges_ = 0;
};

struct EhInvariantReport {
    std::size_t violations = 0;        // hard failures
    std::size_t literal_ratio_misses = 0;  // COUNT: strict C_j / (2 (1 + newer)) <= 1/k, informational
    std::vector<std::string> details;  // first few failures

    bool ok() const noexcept { return violations == 0; }
    void fail(std::string what) {
        ++violations;
        if (details.size() < 8) details.push_back(std::move(what));
    }
};

/// Upper bound on bucket count: k * (ceil(log2(2N/k)) + 2), floored at k for tiny N.
inline std::size_t eh_bucket_bound(int k, std::uint64_t n) {
    if (n == 0) return 0;
    const double l = std::ceil(std::log2(2.0 * static_cast<double>(n) / k)) + 2.0;
    return static_cast<std::size_t>(k) * static_cast<std::size_t>(std::max(l, 1.0));
}

/// Checks the regime's invariants on the current bucket list.
template <typename Traits>
EhInvariantReport check_eh_invariants(const EhWindow<Traits>& w) {
    EhInvariantReport report;
    const auto& b = w.buckets();
    const int k = w.k();
    const Timestamp cutoff = w.now() - w.span();
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[i].oldest_ts > b[i].newest_ts) report.fail("bucket " + std::to_string(i) + " has oldest_ts > newest_ts");
        if (i > 0 && b[i - 1].newest_ts > b[i].oldest_ts) report.fail("bucket " + std::to_string(i) + " overlaps its predecessor");
        if (b[i].newest_ts <= cutoff) report.fail("bucket " + std::to_string(i) + " expired but retained");
        if (b[i].size_metric < 0) report.fail("negative size metric");
    }
    if (w.regime() == EhRegime::kCount) {
        const std::uint64_t n = w.total_count();
        const std::size_t half = static_cast<std::size_t>((k + 1) / 2);
        // Size classes: powers of two, growing from newest to oldest, bounded multiplicity per class.
        std::vector<std::size_t> per_class;
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (b[i].size_metric != static_cast<double>(b[i].count)) report.fail("COUNT metric differs from count");
            if (!std::has_single_bit(b[i].count)) report.fail("bucket size " + std::to_string(b[i].count) + " not a power of two");
            if (i > 0 && b[i - 1].count < b[i].count) report.fail("bucket sizes grow toward newer buckets at " + std::to_string(i));
            const auto e = static_cast<std::size_t>(std::countr_zero(b[i].count));
            if (per_class.size() <= e) per_class.resize(e + 1, 0);
            ++per_class[e];
        }
        if (!per_class.empty()) {
            const std::size_t largest = per_class.size() - 1;
            for (std::size_t e = 0; e < per_class.size(); ++e) {
                if (per_class[e] > half + 1) report.fail("size class 2^" + std::to_string(e) + " holds " + std::to_string(per_class[e]));
                if (e != largest && per_class[e] < half)
                    report.fail("size class 2^" + std::to_string(e) + " holds only " + std::to_string(per_class[e]));
            }
            const double lprime_bound = std::log2(2.0 * static_cast<double>(n) / k) + 1.0;
            if (static_cast<double>(largest) > std::max(lprime_bound, 0.0))
                report.fail("largest size exponent " + std::to_string(largest) + " exceeds log2(2N/k)+1");
        }
        // Size ratio, in the form the size classes imply: C_j / (2 (1 + newer)) <= 2/k for C_j >= 2.
        double newer = 0.0;
        for (std::size_t i = b.size(); i-- > 0;) {
            const double c = static_cast<double>(b[i].count);
            const double ratio = c / (2.0 * (1.0 + newer));
            if (ratio > 1.0 / k) ++report.literal_ratio_misses;
            if (c >= 2 && ratio > 2.0 / k + 1e-12) report.fail("bucket " + std::to_string(i) + " too large for its newer suffix");
            newer += c;
        }
        if (b.size() > eh_bucket_bound(k, n)) report.fail("bucket count " + std::to_string(b.size()) + " above k(log2(2N/k)+2)");
    } else {
        const double factor = kL2sqWeakAdditivity / k;
        double newer = 0.0;
        for (std::size_t i = b.size(); i-- > 0;) {
            // Bucket bound f(B) <= (C_f/k) * newer; a single-sample bucket cannot be split further and is exempt.
            if (b[i].count > 1 && b[i].size_metric > factor * newer * (1 + 1e-12))
                report.fail("bucket " + std::to_string(i) + " violates f(B) <= (C_f/k) * newer");
            // Saturation: the pair (i-1, i) was not mergeable.
            if (i >= 1 && b[i - 1].size_metric + b[i].size_metric <= newer / k * (1 - 1e-12))
                report.fail("pair (" + std::to_string(i - 1) + ", " + std::to_string(i) + ") should have merged");
            newer += b[i].size_metric;
        }
        // Two adjacent buckets grow the newer suffix by a factor (1 + 1/k); singletons have f >= 1.
        if (newer > 0) {
            const double bound = 2.0 * (std::log(std::max(newer, 1.0)) / std::log1p(1.0 / k) + 1.0) + 1.0;
            if (static_cast<double>(b.size()) > bound) report.fail("bucket count above L2SQ bound");
        }
    }
    return report;
}

}  // namespace promsketch

#endif  // PROMSKETCH_EH_WINDOW_HPP
