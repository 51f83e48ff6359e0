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

#include "promsketch/kll.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace promsketch {

std::uint64_t quantile_target_rank(double phi, std::uint64_t n) {
    if (n == 0) return 0;
    if (phi <= 0.0) return 1;
    if (phi >= 1.0) return n;
    // phi * n is rarely exact in binary; shave a relative ulp-scale amount before ceil so
    // that 0.95 * 100 maps to 95, not 96.
    long double scaled = static_cast<long double>(phi) * static_cast<long double>(n);
    auto r = static_cast<std::uint64_t>(std::ceil(scaled - scaled * 1e-12L));
    return std::clamp<std::uint64_t>(r, 1, n);
}

KllSketch::KllSketch(int k, std::uint64_t seed) : k_(k), rng_state_(mix64(seed ^ 0x6b6c6cULL)) {
    if (k < 2) throw Error(ErrorCode::kInvalidArgument, "KLL k must be at least 2");
    levels_.emplace_back();
}

std::size_t KllSketch::capacity(int h) const {
    const int top = num_levels() - 1;
    const double cap = std::ceil(static_cast<double>(k_) * std::pow(2.0 / 3.0, top - h));
    return std::max<std::size_t>(static_cast<std::size_t>(cap), 2);
}

std::size_t KllSketch::num_retained() const noexcept {
    std::size_t total = 0;
    for (const auto& level : levels_) total += level.size();
    return total;
}

std::uint64_t KllSketch::weighted_size() const noexcept {
    std::uint64_t total = 0;
    for (std::size_t h = 0; h < levels_.size(); ++h) total += static_cast<std::uint64_t>(levels_[h].size()) << h;
    return total;
}

bool KllSketch::next_parity() noexcept {
    rng_state_ += 0x9e3779b97f4a7c15ULL;
    return (mix64(rng_state_) >> 17) & 1;
}

void KllSketch::update(double v) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "KLL values must be finite");
    ++n_;
    min_ = std::min(min_, v);
    max_ = std::max(max_, v);
    levels_[0].push_back(v);
    if (levels_[0].size() > capacity(0)) compress();
}

void KllSketch::merge(const KllSketch& other) {
    if (other.k_ != k_) throw Error(ErrorCode::kMismatchedConfig, "cannot merge KLL sketches with different k");
    if (other.n_ == 0) return;
    if (levels_.size() < other.levels_.size()) levels_.resize(other.levels_.size());
    for (std::size_t h = 0; h < other.levels_.size(); ++h)
        levels_[h].insert(levels_[h].end(), other.levels_[h].begin(), other.levels_[h].end());
    n_ += other.n_;
    min_ = std::min(min_, other.min_);
    max_ = std::max(max_, other.max_);
    rng_state_ ^= mix64(other.rng_state_);
    compress();
}

void KllSketch::compress() {
    for (;;) {
        int victim = -1;
        for (int h = 0; h < num_levels(); ++h) {
            if (levels_[h].size() > capacity(h)) {
                victim = h;
                break;
            }
        }
        if (victim < 0) return;
        compact_level(victim);
    }
}

void KllSketch::compact_level(int h) {
    if (h + 1 == num_levels()) levels_.emplace_back();
    auto& buf = levels_[h];
    std::sort(buf.begin(), buf.end());
    // An odd element stays behind at its own weight.
    std::size_t held = buf.size() % 2;
    std::size_t offset = next_parity() ? 1 : 0;
    auto& up = levels_[h + 1];
    for (std::size_t i = held + offset; i < buf.size(); i += 2) up.push_back(buf[i]);
    buf.resize(held);
}

double KllSketch::quantile(double phi) const {
    if (n_ == 0) throw Error(ErrorCode::kEmptySketch, "quantile of an empty sketch");
    if (!(phi >= 0.0 && phi <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "phi must be in [0, 1]");
    if (phi == 0.0) return min_;
    if (phi == 1.0) return max_;
    std::vector<std::pair<double, std::uint64_t>> weighted;
    weighted.reserve(num_retained());
    for (std::size_t h = 0; h < levels_.size(); ++h)
        for (double v : levels_[h]) weighted.emplace_back(v, std::uint64_t{1} << h);
    std::sort(weighted.begin(), weighted.end());
    const std::uint64_t target = quantile_target_rank(phi, n_);
    std::uint64_t cumulative = 0;
    for (const auto& [v, w] : weighted) {
        cumulative += w;
        if (cumulative >= target) return v;
    }
    return max_;
}

std::uint64_t KllSketch::rank(double x) const {
    if (n_ == 0) throw Error(ErrorCode::kEmptySketch, "rank of an empty sketch");
    if (x < min_) return 0;
    if (x >= max_) return n_;
    std::uint64_t total = 0;
    for (std::size_t h = 0; h < levels_.size(); ++h)
        for (double v : levels_[h])
            if (v <= x) total += std::uint64_t{1} << h;
    return total;
}

void KllSketch::serialize(ByteWriter& out) const {
    out.put<std::uint32_t>(static_cast<std::uint32_t>(k_));
    out.put<std::uint64_t>(n_);
    out.put<double>(min_);
    out.put<double>(max_);
    out.put<std::uint64_t>(rng_state_);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(levels_.size()));
    for (const auto& level : levels_) {
        out.put<std::uint32_t>(static_cast<std::uint32_t>(level.size()));
        out.put_span<double>(level);
    }
}

KllSketch KllSketch::deserialize(ByteReader& in) {
    auto k = static_cast<int>(in.get<std::uint32_t>());
    KllSketch s(k);
    s.n_ = in.get<std::uint64_t>();
    s.min_ = in.get<double>();
    s.max_ = in.get<double>();
    s.rng_state_ = in.get<std::uint64_t>();
    auto num_levels = in.get<std::uint32_t>();
    if (num_levels == 0 || num_levels > 64) throw Error(ErrorCode::kCorruptData, "bad KLL level count");
    s.levels_.assign(num_levels, {});
    for (auto& level : s.levels_) {
        level.resize(in.get<std::uint32_t>());
        in.get_into<double>(level);
    }
    if (s.weighted_size() != s.n_) throw Error(ErrorCode::kCorruptData, "KLL weight does not match n");
    return s;
}

std::size_t KllSketch::serialized_size() const noexcept {
    return 4 + 8 + 8 + 8 + 8 + 4 + levels_.size() * 4 + num_retained() * sizeof(double);
}

std::size_t KllSketch::memory_usage() const noexcept {
    std::size_t total = memory::of(levels_);
    for (const auto& level : levels_) total += memory::of(level);
    return total;
}

}  // namespace promsketch
