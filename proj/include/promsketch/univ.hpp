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

#ifndef PROMSKETCH_UNIV_HPP
#define PROMSKETCH_UNIV_HPP

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "promsketch/bytes.hpp"
#include "promsketch/core.hpp"
#include "promsketch/memory.hpp"

namespace promsketch {

enum class GsumStat { kL0, kL1, kL2, kEntropy };

std::string_view to_string(GsumStat stat);

/// Signed-counter frequency sketch: rows x cols, median-of-rows estimate.
class CountSketch {
  public:
    CountSketch(int rows, int cols, std::uint64_t seed);

    void update(Token t, std::int64_t w);
    /// Update, then return the new estimate of t. Saves rehashing on the hot path.
    double update_and_estimate(Token t, std::int64_t w);
    double estimate(Token t) const;

    /// Elementwise counter addition. Shapes and seeds must match.
    void merge(const CountSketch& other);
    /// Median over rows of the row dot products; estimates sum_i f_i * g_i.
    double inner_product(const CountSketch& other) const;

    bool compatible(const CountSketch& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_ && seeds_ == other.seeds_;
    }
    bool all_zero() const noexcept;

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    const std::vector<std::int64_t>& counters() const noexcept { return counters_; }
    std::size_t memory_usage() const noexcept { return memory::of(counters_) + memory::of(seeds_); }

    void serialize(ByteWriter& out) const;
    /// Reads counters into an already-shaped sketch.
    void deserialize_counters(ByteReader& in);

    /// Flat counter index of t in `row`; sign receives t's +1/-1 for that row.
    std::size_t cell(int row, Token t, std::int64_t& sign) const noexcept;

  private:
    int rows_;
    int cols_;
    std::vector<std::uint64_t> seeds_;  // two per row: bucket, sign
    std::vector<std::int64_t> counters_;
};

/// Fixed-capacity set of (token, estimate) keeping the largest estimates.
class HeavyHitters {
  public:
    explicit HeavyHitters(std::size_t capacity) : capacity_(capacity) {}

    /// Inserts or refreshes t. When full, t replaces the smallest entry only if larger.
    void offer(Token t, double estimate);
    void clear();

    /// True while no token has ever been dropped, i.e. the entries are the full support.
    bool lossless() const noexcept { return lossless_; }
    void set_lossless(bool v) noexcept { lossless_ = v; }
    double min_estimate() const noexcept { return heap_.empty() ? 0.0 : heap_.front().first; }

    std::size_t size() const noexcept { return heap_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    bool contains(Token t) const { return pos_.count(t) != 0; }
    const std::vector<std::pair<double, Token>>& entries() const noexcept { return heap_; }
    std::size_t memory_usage() const noexcept { return memory::of(heap_) + memory::of(pos_); }

  private:
    void sift_up(std::size_t i);
    void sift_down(std::size_t i);
    void swap_entries(std::size_t a, std::size_t b);

    std::size_t capacity_;
    bool lossless_ = true;
    std::vector<std::pair<double, Token>> heap_;  // min-heap on estimate
    std::unordered_map<Token, std::size_t> pos_;
};

/**
 * Layered Count Sketches with per-layer heavy-hitter candidates.
 *
 * Token t lives in exactly one layer, its deepest sampled layer d(t): layer j > 0 keeps t
 * iff the sampling bits of layers 1..j are all set. Upper layers use cs_cols_top columns,
 * lower layers cs_cols_bottom.
 *
 * Queries first refine candidate frequencies layer by layer: a layer whose candidate set never
 * dropped a token is decoded by peeling (exact when the peel completes), other layers are
 * re-estimated greedily on residual counters. Each layer then gets a tracking threshold above
 * its residual noise and its candidate-set minimum, and the recursive estimator counts a token
 * at virtual layer j iff d(t) >= j and its frequency clears the threshold of every layer >= j.
 * Tracking therefore depends on frequency, not on which layer happened to hold the token.
 */
class UnivSketch {
  public:
    explicit UnivSketch(const SketchConfig& config);

    /// Returns the estimate of t in its layer after the update.
    double update(Token t, std::int64_t w = 1);
    void merge(const UnivSketch& other);

    double gsum(GsumStat stat) const;
    /// Recursive estimate of sum_i g(f_i). g receives rounded, nonnegative frequencies.
    double gsum(const std::function<double(double)>& g) const;
    std::vector<std::pair<Token, double>> topk(std::size_t k) const;

    double estimate(Token t) const;
    int deepest_layer(Token t) const noexcept;
    /// Estimate of sum_i f_i * g_i between two compatible sketches (per-layer inner products).
    double inner_product(const UnivSketch& other) const;

    bool compatible(const UnivSketch& other) const noexcept;
    std::uint64_t total() const noexcept { return n_total_; }
    bool empty() const noexcept { return n_total_ == 0; }
    int num_layers() const noexcept { return static_cast<int>(layers_.size()); }
    const CountSketch& layer(int j) const { return layers_[j]; }
    const HeavyHitters& candidates(int j) const { return heaps_[j]; }
    const SketchConfig& config() const noexcept { return config_; }

    static std::size_t hh_capacity_for(const SketchConfig& config);
    /// Serialized size with empty candidate sets; the default map/sketch switch point.
    static std::size_t base_serialized_size(const SketchConfig& config);

    void serialize(ByteWriter& out) const;
    static UnivSketch deserialize(ByteReader& in);
    std::size_t serialized_size() const noexcept;
    std::size_t memory_usage() const noexcept;

    /// Tracked tokens with refined frequencies, plus the per-layer tracking thresholds.
    struct Resolved {
        struct Item {
            Token token;
            double freq;
            int layer;
        };
        std::vector<Item> items;
        std::vector<double> threshold;  // non-increasing in layer
    };
    Resolved resolve() const;

  private:
    std::vector<Resolved::Item> decode_layer(int j, double& tau) const;

    SketchConfig config_;
    std::vector<std::uint64_t> layer_seeds_;
    std::vector<CountSketch> layers_;
    std::vector<HeavyHitters> heaps_;
    std::uint64_t n_total_ = 0;
};

}  // namespace promsketch

#endif  // PROMSKETCH_UNIV_HPP
