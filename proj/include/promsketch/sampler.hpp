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

#ifndef PROMSKETCH_SAMPLER_HPP
#define PROMSKETCH_SAMPLER_HPP

#include <deque>
#include <random>

#include "promsketch/bytes.hpp"
#include "promsketch/core.hpp"
#include "promsketch/memory.hpp"

namespace promsketch {

enum class SampleStat { kAvg, kSum, kCount, kStddev, kStdvar };

std::string_view to_string(SampleStat stat);

/// Bernoulli(p) sample of the most recent window. Moments are read off the retained samples.
class SampleWindow {
  public:
    SampleWindow(double p, Timestamp span_ms, std::uint64_t seed);

    /// Returns true when the sample was admitted. Throws OutOfOrder, InvalidArgument (non-finite).
    bool insert(Timestamp t, double v);

    /// AVG sample mean; SUM and COUNT scaled by 1/p; STDVAR unbiased sample variance; STDDEV its root.
    double query(const TimeWindow& q, SampleStat stat) const;

    std::size_t size() const noexcept { return samples_.size(); }
    const std::deque<std::pair<Timestamp, double>>& samples() const noexcept { return samples_; }
    double probability() const noexcept { return p_; }
    Timestamp now() const noexcept { return now_; }
    Timestamp span() const noexcept { return span_; }
    void set_span(Timestamp span_ms);

    std::size_t serialized_size() const noexcept;
    std::size_t memory_usage() const noexcept { return memory::of(samples_); }
    void serialize(ByteWriter& out) const;
    static SampleWindow deserialize(ByteReader& in);

  private:
    void expire();

    double p_;
    Timestamp span_;
    std::uint64_t seed_;
    std::mt19937_64 rng_;
    std::uint64_t draws_ = 0;
    std::deque<std::pair<Timestamp, double>> samples_;
    Timestamp now_ = 0;
    bool has_data_ = false;
};

}  // namespace promsketch

#endif  // PROMSKETCH_SAMPLER_HPP
