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

#include "promsketch/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace promsketch {

std::string_view to_string(SampleStat stat) {
    switch (stat) {
        case SampleStat::kAvg:
            return "avg";
        case SampleStat::kSum:
            return "sum";
        case SampleStat::kCount:
            return "count";
        case SampleStat::kStddev:
            return "stddev";
        case SampleStat::kStdvar:
            return "stdvar";
    }
    return "?";
}

SampleWindow::SampleWindow(double p, Timestamp span_ms, std::uint64_t seed)
    : p_(p), span_(span_ms), seed_(seed), rng_(seed) {
    if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "sampling probability outside (0, 1]");
    if (span_ms <= 0) throw Error(ErrorCode::kInvalidArgument, "window span must be positive");
}

void SampleWindow::set_span(Timestamp span_ms) {
    if (span_ms <= 0) throw Error(ErrorCode::kInvalidArgument, "window span must be positive");
    span_ = span_ms;
}

bool SampleWindow::insert(Timestamp t, double v) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "non-finite sample value");
    if (has_data_ && t < now_) throw Error(ErrorCode::kOutOfOrder, "timestamp precedes newest sample");
    now_ = t;
    has_data_ = true;
    // 53-bit uniform in [0, 1); one draw per insert keeps the stream replayable from (seed, draws).
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    ++draws_;
    const bool admitted = u < p_;
    if (admitted) samples_.emplace_back(t, v);
    expire();
    return admitted;
}

void SampleWindow::expire() {
    const Timestamp cutoff = now_ - span_;
    while (!samples_.empty() && samples_.front().first <= cutoff) samples_.pop_front();
}

double SampleWindow::query(const TimeWindow& q, SampleStat stat) const {
    if (q.end > now_ || q.start < now_ - span_) throw Error(ErrorCode::kQueryOutsideWindow, "query outside retained window");
    auto by_ts = [](const std::pair<Timestamp, double>& s, Timestamp t) { return s.first <= t; };
    auto lo = std::partition_point(samples_.begin(), samples_.end(), [&](const auto& s) { return by_ts(s, q.start); });
    auto hi = std::partition_point(lo, samples_.end(), [&](const auto& s) { return by_ts(s, q.end); });
    const auto n = static_cast<std::size_t>(hi - lo);
    if (stat == SampleStat::kCount) return static_cast<double>(n) / p_;
    if (n == 0) throw Error(ErrorCode::kEmptyRange, "no retained samples in range");
    double sum = 0.0;
    for (auto it = lo; it != hi; ++it) sum += it->second;
    if (stat == SampleStat::kSum) return sum / p_;
    const double mean = sum / static_cast<double>(n);
    if (stat == SampleStat::kAvg) return mean;
    if (n < 2) throw Error(ErrorCode::kInsufficientSamples, "variance needs two samples");
    double ss = 0.0;
    for (auto it = lo; it != hi; ++it) ss += (it->second - mean) * (it->second - mean);
    const double var = ss / static_cast<double>(n - 1);
    return stat == SampleStat::kStdvar ? var : std::sqrt(var);
}

std::size_t SampleWindow::serialized_size() const noexcept {
    return sizeof(double) + 5 * sizeof(std::int64_t) + samples_.size() * (sizeof(std::int64_t) + sizeof(double));
}

void SampleWindow::serialize(ByteWriter& out) const {
    out.put<double>(p_);
    out.put<std::int64_t>(span_);
    out.put<std::uint64_t>(seed_);
    out.put<std::uint64_t>(draws_);
    out.put<std::int64_t>(has_data_ ? now_ : -1);
    out.put<std::uint64_t>(samples_.size());
    for (const auto& [t, v] : samples_) {
        out.put<std::int64_t>(t);
        out.put<double>(v);
    }
}

SampleWindow SampleWindow::deserialize(ByteReader& in) {
    const auto p = in.get<double>();
    const auto span = in.get<std::int64_t>();
    const auto seed = in.get<std::uint64_t>();
    if (!(p > 0.0 && p <= 1.0) || span <= 0) throw Error(ErrorCode::kCorruptData, "bad sampler header");
    SampleWindow s(p, span, seed);
    s.draws_ = in.get<std::uint64_t>();
    s.rng_.discard(s.draws_);
    const auto now = in.get<std::int64_t>();
    s.has_data_ = now >= 0;
    s.now_ = now < 0 ? 0 : now;
    const auto count = in.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto t = in.get<std::int64_t>();
        s.samples_.emplace_back(t, in.get<double>());
    }
    return s;
}

}  // namespace promsketch
