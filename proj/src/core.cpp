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

#include "promsketch/core.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

namespace promsketch {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::kDuplicateLabel: return "DuplicateLabel";
        case ErrorCode::kInvalidArgument: return "InvalidArgument";
        case ErrorCode::kMismatchedConfig: return "MismatchedConfig";
        case ErrorCode::kEmptySketch: return "EmptySketch";
        case ErrorCode::kOutOfOrder: return "OutOfOrder";
        case ErrorCode::kDuplicate: return "Duplicate";
        case ErrorCode::kQueryOutsideWindow: return "QueryOutsideWindow";
        case ErrorCode::kEmptyWindow: return "EmptyWindow";
        case ErrorCode::kEmptyRange: return "EmptyRange";
        case ErrorCode::kInsufficientSamples: return "InsufficientSamples";
        case ErrorCode::kParseError: return "ParseError";
        case ErrorCode::kUnsupportedFunction: return "UnsupportedFunction";
        case ErrorCode::kUnknownRule: return "UnknownRule";
        case ErrorCode::kTypeMismatch: return "TypeMismatch";
        case ErrorCode::kCorruptData: return "CorruptData";
    }
    return "Unknown";
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) noexcept {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

// Length-prefixed fields so ("ab","c") and ("a","bc") never collide structurally.
void append_field(std::string& out, std::string_view field) {
    auto len = static_cast<std::uint32_t>(field.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
    out.append(field);
}

}  // namespace

SeriesId canonicalize(std::string metric, std::vector<Label> labels) {
    if (metric.empty()) throw Error(ErrorCode::kInvalidArgument, "metric name must be nonempty");
    std::sort(labels.begin(), labels.end(),
              [](const Label& a, const Label& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].first.empty()) throw Error(ErrorCode::kInvalidArgument, "empty label name");
        if (i > 0 && labels[i].first == labels[i - 1].first)
            throw Error(ErrorCode::kDuplicateLabel, "duplicate label '" + labels[i].first + "'");
    }
    std::string encoded;
    append_field(encoded, metric);
    for (const auto& [name, value] : labels) {
        append_field(encoded, name);
        append_field(encoded, value);
    }
    SeriesId id;
    id.canonical_id = fnv1a64(encoded);
    id.metric_name = std::move(metric);
    id.labels = std::move(labels);
    return id;
}

std::string SeriesId::to_string() const {
    std::string out = metric_name;
    if (labels.empty()) return out;
    out.push_back('{');
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) out.push_back(',');
        out += labels[i].first;
        out += "=\"";
        out += labels[i].second;
        out.push_back('"');
    }
    out.push_back('}');
    return out;
}

TimeWindow::TimeWindow(Timestamp s, Timestamp e) : start(s), end(e) {
    if (!(s < e)) throw Error(ErrorCode::kInvalidArgument, "time window requires start < end");
}

void SketchConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
    auto pow2 = [](int v) { return v > 0 && (v & (v - 1)) == 0; };
    if (k_eh <= 0) fail("k_eh must be positive");
    if (k_kll <= 1) fail("k_kll must be at least 2");
    if (univ_layers <= 0 || univ_layers > 64) fail("univ_layers must be in [1, 64]");
    if (cs_rows <= 0 || cs_rows > 31) fail("cs_rows must be in [1, 31]");
    if (!pow2(cs_cols_top) || !pow2(cs_cols_bottom)) fail("count sketch widths must be powers of two");
    if (cs_cols_bottom > cs_cols_top) fail("cs_cols_bottom must not exceed cs_cols_top");
    if (!(hh_epsilon > 0.0 && hh_epsilon < 1.0)) fail("hh_epsilon must be in (0, 1)");
    if (!(sample_prob > 0.0 && sample_prob <= 1.0)) fail("sample_prob must be in (0, 1]");
    if (!(confidence_delta > 0.0 && confidence_delta < 1.0)) fail("confidence_delta must be in (0, 1)");
}

SketchConfig SketchConfig::quantile_defaults() {
    SketchConfig c;
    c.k_eh = 50;
    c.k_kll = 256;
    return c;
}

SketchConfig SketchConfig::gsum_defaults() {
    SketchConfig c;
    c.k_eh = 20;
    c.univ_layers = 16;
    c.cs_rows = 3;
    c.cs_cols_top = 2048;
    c.cs_cols_bottom = 512;
    return c;
}

SketchConfig SketchConfig::sampling_defaults() {
    SketchConfig c;
    c.sample_prob = 0.1;
    return c;
}

TokenInterner& TokenInterner::global() {
    static TokenInterner instance;
    return instance;
}

Token TokenInterner::token_for_double(double v) noexcept {
    if (v == 0.0) v = 0.0;  // fold -0
    // Every NaN maps to one signalling pattern, outside the string tag space.
    if (std::isnan(v)) return 0x7ff4000000000000ULL;
    return std::bit_cast<Token>(v);
}

Token TokenInterner::token_for_string(std::string_view s) {
    {
        std::shared_lock lock(mu_);
        if (auto it = ids_.find(std::string(s)); it != ids_.end()) return it->second;
    }
    std::unique_lock lock(mu_);
    auto [it, inserted] = ids_.try_emplace(std::string(s), kStringTag | strings_.size());
    if (inserted) strings_.emplace_back(s);
    return it->second;
}

Token TokenInterner::token_for(const SampleValue& value) {
    if (const auto* d = std::get_if<double>(&value)) return token_for_double(*d);
    return token_for_string(std::get<std::string>(value));
}

SampleValue TokenInterner::value_of(Token t) const {
    if (!is_string_token(t)) return std::bit_cast<double>(t);
    std::shared_lock lock(mu_);
    auto idx = static_cast<std::size_t>(t & ~kStringTagMask);
    if (idx >= strings_.size()) throw Error(ErrorCode::kInvalidArgument, "unknown string token");
    return strings_[idx];
}

}  // namespace promsketch
