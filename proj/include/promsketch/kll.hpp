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

#ifndef PROMSKETCH_KLL_HPP
#define PROMSKETCH_KLL_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "promsketch/bytes.hpp"
#include "promsketch/memory.hpp"

namespace promsketch {

/// Smallest rank r >= 1 with r >= phi * n. Shared rank convention for quantile answers.
std::uint64_t quantile_target_rank(double phi, std::uint64_t n);

/// Published empirical normalized rank error of a k-wide compactor hierarchy (two-sided, 99%).
/// Used for error annotations; tests calibrate their own value.
inline double kll_rank_epsilon(int k) { return 2.296 / std::pow(static_cast<double>(k), 0.9723); }

/**
 * Mergeable quantile summary with additive rank error (compactor hierarchy).
 *
 * Level h holds items of weight 2^h. The capacity of level h is
 * max(ceil(k * (2/3)^(H - h)), 2), where H is the top level; a level that overflows
 * is sorted and every other item (random parity) is promoted one level up.
 * The exact stream minimum and maximum are carried alongside the compactors.
 */
class KllSketch {
  public:
    explicit KllSketch(int k = 256, std::uint64_t seed = 0);

    void update(double v);
    void merge(const KllSketch& other);

    /// phi = 0 and phi = 1 return the exact min and max.
    double quantile(double phi) const;
    /// Estimated number of inserted items <= x.
    std::uint64_t rank(double x) const;

    std::uint64_t count() const noexcept { return n_; }
    bool empty() const noexcept { return n_ == 0; }
    double min() const noexcept { return min_; }
    double max() const noexcept { return max_; }
    int k() const noexcept { return k_; }

    int num_levels() const noexcept { return static_cast<int>(levels_.size()); }
    std::size_t level_size(int h) const { return levels_[h].size(); }
    std::size_t capacity(int h) const;
    std::size_t num_retained() const noexcept;
    /// Sum of level weights; equals count() at all times.
    std::uint64_t weighted_size() const noexcept;

    void serialize(ByteWriter& out) const;
    static KllSketch deserialize(ByteReader& in);
    std::size_t serialized_size() const noexcept;
    /// Estimated heap bytes held by the compactor levels.
    std::size_t memory_usage() const noexcept;

  private:
    void compress();
    void compact_level(int h);
    bool next_parity() noexcept;

    int k_;
    std::uint64_t n_ = 0;
    double min_ = std::numeric_limits<double>::infinity();
    double max_ = -std::numeric_limits<double>::infinity();
    std::uint64_t rng_state_;
    std::vector<std::vector<double>> levels_;
};

}  // namespace promsketch

#endif  // PROMSKETCH_KLL_HPP
