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

#ifndef PROMSKETCH_QUERY_HPP
#define PROMSKETCH_QUERY_HPP

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "promsketch/core.hpp"

namespace promsketch {

enum class QueryFunction {
    kQuantile,
    kMin,
    kMax,
    kCount,
    kSum,
    kAvg,
    kStddev,
    kStdvar,
    kEntropy,
    kDistinct,
    kL2,
    kTopk,
};

/// Sketch family that answers a function: one instance per (series, family) serves all of its functions.
enum class Family : std::uint8_t { kQuantile = 0, kGsum = 1, kSample = 2 };

std::string_view to_string(QueryFunction f);
std::string_view to_string(Family f);
Family family_of(QueryFunction f);
bool takes_argument(QueryFunction f);

class ParseError : public Error {
  public:
    ParseError(std::size_t position, const std::string& what)
        : Error(ErrorCode::kParseError, what + " at position " + std::to_string(position)), position_(position) {}

    std::size_t position() const noexcept { return position_; }

  private:
    std::size_t position_;
};

struct Selector {
    std::string metric;
    std::vector<Label> matchers;  // exact-match, sorted by name

    bool matches(const SeriesId& series) const;
    bool operator==(const Selector&) const = default;
};

struct QueryExpr {
    QueryFunction func = QueryFunction::kAvg;
    std::optional<double> arg;  // phi for quantile, k for topk
    Selector selector;
    Timestamp range_ms = 0;
    Timestamp offset_ms = 0;

    /// Span of history a cache instance must retain to answer this expression.
    Timestamp lookback_ms() const noexcept { return range_ms + offset_ms; }
    /// (at - offset - range, at - offset]
    TimeWindow window_at(Timestamp at) const { return {at - offset_ms - range_ms, at - offset_ms}; }

    bool operator==(const QueryExpr&) const = default;
};

/// FUNC '(' [NUM ','] SELECTOR '[' DURATION ']' [offset DURATION] ')'.
/// Throws ParseError (with position) or UnsupportedFunction for an unknown *_over_time function.
QueryExpr parse_query(std::string_view text);
std::string unparse(const QueryExpr& expr);

/// Integer plus one of ms, s, m, h, d.
Timestamp parse_duration(std::string_view text);
std::string format_duration(Timestamp ms);

using TopkList = std::vector<std::pair<Token, double>>;
using QueryValue = std::variant<double, TopkList>;

struct StoredSample {
    Timestamp ts;
    SampleValue value;

    bool operator==(const StoredSample&) const = default;
};

/// Brute-force reference semantics over time-sorted samples: order statistic at rank ceil(phi*n),
/// base-2 entropy over value frequencies, (n-1) variance. Throws EmptyRange, InsufficientSamples,
/// TypeMismatch (numeric function over string values).
QueryValue exact_eval(QueryFunction func, std::span<const StoredSample> samples, std::optional<double> arg);

}  // namespace promsketch

#endif  // PROMSKETCH_QUERY_HPP
