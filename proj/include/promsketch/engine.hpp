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

#ifndef PROMSKETCH_ENGINE_HPP
#define PROMSKETCH_ENGINE_HPP

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "promsketch/cache.hpp"
#include "promsketch/query.hpp"

namespace promsketch {

enum class ResultSource { kCache, kExact, kMixed };

std::string_view to_string(ResultSource s);

struct ErrorAnnotation {
    std::string bound_kind;
    double epsilon = 0.0;
};

struct SeriesResult {
    SeriesId series;
    std::optional<QueryValue> value;
    ResultSource source = ResultSource::kExact;
    CacheMiss miss = CacheMiss::kNoInstance;
    std::optional<ErrorAnnotation> annotation;
    std::optional<ErrorCode> error_code;
    std::string error;
};

struct QueryResult {
    QueryExpr expr;
    TimeWindow window;
    std::vector<SeriesResult> series;  // sorted by series name
    /// kCache only when every series was answered from the cache.
    ResultSource source = ResultSource::kExact;
    bool no_series_matched() const noexcept { return series.empty(); }
};

/// Routes `*_over_time` expressions to cache instances and falls back to the raw samples.
class QueryEngine {
  public:
    explicit QueryEngine(const SketchCache& cache, bool use_cache = true) : cache_(cache), use_cache_(use_cache) {}

    /// Series are evaluated in parallel; identical to evaluate_serial.
    QueryResult evaluate(const QueryExpr& expr, Timestamp at) const;
    QueryResult evaluate_serial(const QueryExpr& expr, Timestamp at) const;
    QueryResult evaluate(std::string_view text, Timestamp at) const { return evaluate(parse_query(text), at); }

    void set_use_cache(bool on) noexcept { use_cache_ = on; }
    bool use_cache() const noexcept { return use_cache_; }
    std::uint64_t hits() const noexcept { return hits_.load(); }
    std::uint64_t misses() const noexcept { return misses_.load(); }

  private:
    QueryResult prepare(const QueryExpr& expr, Timestamp at) const;
    void evaluate_series(const QueryExpr& expr, const TimeWindow& q, SeriesResult& out) const;
    static void finish(QueryResult& r);

    const SketchCache& cache_;
    bool use_cache_;
    mutable std::atomic<std::uint64_t> hits_{0};
    mutable std::atomic<std::uint64_t> misses_{0};
};

}  // namespace promsketch

#endif  // PROMSKETCH_ENGINE_HPP
