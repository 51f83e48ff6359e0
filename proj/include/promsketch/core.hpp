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

#ifndef PROMSKETCH_CORE_HPP
#define PROMSKETCH_CORE_HPP

#include <bit>
#include <cstdint>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

namespace promsketch {

using Timestamp = std::int64_t;  // milliseconds since epoch
using Token = std::uint64_t;

enum class ErrorCode {
    kDuplicateLabel,
    kInvalidArgument,
    kMismatchedConfig,
    kEmptySketch,
    kOutOfOrder,
    kDuplicate,
    kQueryOutsideWindow,
    kEmptyWindow,
    kEmptyRange,
    kInsufficientSamples,
    kParseError,
    kUnsupportedFunction,
    kUnknownRule,
    kTypeMismatch,
    kCorruptData,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

/// 64-bit finalizer from MurmurHash3; used for every seeded hash in the project.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

constexpr std::uint64_t seeded_hash(std::uint64_t key, std::uint64_t seed) noexcept {
    return mix64(key ^ mix64(seed + 0x9e3779b97f4a7c15ULL));
}

/// FNV-1a over raw bytes. Stable across processes and platforms.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

using Label = std::pair<std::string, std::string>;

struct SeriesId {
    std::string metric_name;
    std::vector<Label> labels;  // sorted by name, names unique
    std::uint64_t canonical_id = 0;

    bool operator==(const SeriesId& other) const {
        return canonical_id == other.canonical_id && metric_name == other.metric_name &&
               labels == other.labels;
    }

    /// `name{a="1",b="2"}`
    std::string to_string() const;
};

/// Sorts labels and computes the canonical id. Throws DuplicateLabel on a repeated name.
SeriesId canonicalize(std::string metric, std::vector<Label> labels);

struct SeriesIdHash {
    std::size_t operator()(const SeriesId& id) const noexcept { return id.canonical_id; }
};

using SampleValue = std::variant<double, std::string>;

struct DataSample {
    SeriesId series;
    Timestamp timestamp = 0;
    SampleValue value;
};

/// Half-open time interval (start, end].
struct TimeWindow {
    Timestamp start = 0;
    Timestamp end = 0;

    TimeWindow() = default;
    TimeWindow(Timestamp s, Timestamp e);

    bool contains(Timestamp t) const noexcept { return start < t && t <= end; }
    Timestamp span() const noexcept { return end - start; }
    bool operator==(const TimeWindow&) const = default;
};

inline bool window_contains(const TimeWindow& w, Timestamp t) noexcept { return w.contains(t); }

struct SketchConfig {
    int k_eh = 50;
    int k_kll = 256;
    int univ_layers = 16;
    int cs_rows = 3;
    int cs_cols_top = 2048;
    int cs_cols_bottom = 512;
    // 0 selects the serialized size of one universal sketch under this config.
    std::size_t map_threshold_bytes = 0;
    // Target relative error used to size the per-layer heavy-hitter candidate sets.
    double hh_epsilon = 0.05;
    double sample_prob = 0.1;
    double confidence_delta = 0.05;
    std::uint64_t seed = 0x5eed;

    void validate() const;

    /// Defaults used for the quantile family (k_eh=50, k_kll=256).
    static SketchConfig quantile_defaults();
    /// Defaults used for the GSum family: k_eh=20, 16 layers, 8 x (3x2048) then 8 x (3x512).
    static SketchConfig gsum_defaults();
    /// Defaults for uniform sampling (p = 0.1).
    static SketchConfig sampling_defaults();
};

/// Maps a sample value to a 64-bit item identity for GSum statistics.
/// Numeric values map to their IEEE bit pattern (with -0 folded to +0); strings are interned
/// into the quiet-NaN payload space, which finite values can never occupy.
class TokenInterner {
  public:
    static TokenInterner& global();

    Token token_for(const SampleValue& value);
    Token token_for_string(std::string_view s);
    static Token token_for_double(double v) noexcept;

    static bool is_string_token(Token t) noexcept { return (t & kStringTagMask) == kStringTag; }

    /// Inverse mapping; numeric tokens come back as doubles.
    SampleValue value_of(Token t) const;

  private:
    static constexpr Token kStringTag = 0x7ff8000000000000ULL;
    static constexpr Token kStringTagMask = 0xfff8000000000000ULL;

    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, Token> ids_;
    std::vector<std::string> strings_;
};

}  // namespace promsketch

#endif  // PROMSKETCH_CORE_HPP
