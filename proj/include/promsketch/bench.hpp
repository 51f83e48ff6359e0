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

#ifndef PROMSKETCH_BENCH_HPP
#define PROMSKETCH_BENCH_HPP

#include <ostream>
#include <string>
#include <vector>

#include "promsketch/core.hpp"
#include "promsketch/harness.hpp"

namespace promsketch::bench {

enum class Algo { kEhKll, kEhUniv, kSampler };

std::string_view to_string(Algo a);
/// "ehkll", "ehuniv", "sampler", or "all" (every algorithm).
std::vector<Algo> parse_algos(std::string_view name);

struct Options {
    std::string dataset = "zipf";  // zipf | uniform | dynamic | file
    std::string file;              // CSV path when dataset == "file"
    std::size_t n = 1'000'000;
    std::size_t window = 1'000'000;  // in samples; 0 with a file means the whole trace
    std::vector<Algo> algos{Algo::kEhKll, Algo::kEhUniv, Algo::kSampler};
    std::uint64_t seed = 1;
    std::size_t topk = 20;
    SketchConfig quantile = SketchConfig::quantile_defaults();
    SketchConfig gsum = SketchConfig::gsum_defaults();
    SketchConfig sample = SketchConfig::sampling_defaults();
};

/// Mean relative error of one statistic at one drill-down level.
struct StatSummary {
    std::string stat;
    std::string level;
    double mean_error = 0.0;
    std::size_t windows = 0;
};

struct AlgoSummary {
    Algo algo = Algo::kEhKll;
    std::size_t bytes = 0;  // serialized instance size after ingestion
    double inserts_per_sec = 0.0;
    double queries_per_sec = 0.0;
    std::vector<StatSummary> stats;
};

struct Report {
    std::size_t points = 0;
    std::vector<harness::AccuracyReport> rows;
    std::vector<AlgoSummary> algos;
};

/// Generates (or reads) the stream, ingests the newest `window` samples' span into each algorithm,
/// and issues the drill-down mix: the whole window, its 10 consecutive tenths, then the newest tenth
/// split into 10 hundredths. Truths come from the harness reference statistics.
/// Quantile rows: "ks" (over the 99-point grid) plus "quantile_0.5/0.9/0.99"; GSum rows: "distinct",
/// "entropy", "l2", "topk_recall"; sampler rows: "count", "sum", "avg", "stddev", "stdvar".
Report run(const Options& options);

void write_csv(std::ostream& out, const Report& report);
void write_summary(std::ostream& out, const Report& report);

}  // namespace promsketch::bench

#endif  // PROMSKETCH_BENCH_HPP
