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

#ifndef PROMSKETCH_HARNESS_HPP
#define PROMSKETCH_HARNESS_HPP

#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "promsketch/core.hpp"

namespace promsketch::harness {

enum class DatasetKind { kZipf, kUniform, kDynamic };

DatasetKind parse_dataset(std::string_view name);
std::string_view to_string(DatasetKind kind);

struct StreamPoint {
    Timestamp ts;
    double value;
};

constexpr std::size_t kValueSupport = 100001;  // values live in [0, 100000]
constexpr Timestamp kDefaultStepMs = 100;
constexpr std::size_t kDynamicPhaseLength = 1000000;

/// Inverse-CDF sampler for Pr(k) proportional to (1 + k)^-s over k in [0, support).
class ZipfDistribution {
  public:
    explicit ZipfDistribution(std::size_t support = kValueSupport, double exponent = 1.01);

    std::uint64_t operator()(std::mt19937_64& rng) const;
    double probability(std::uint64_t k) const;

  private:
    std::vector<double> cdf_;
};

/// Deterministic under seed. Dynamic streams rotate zipf -> uniform -> normal every 1M points;
/// normal values (mu 50000, sigma 10000) are rounded and clamped into the value range.
std::vector<StreamPoint> generate(DatasetKind kind, std::size_t n, std::uint64_t seed, Timestamp start_ts = 0,
                                  Timestamp step_ms = kDefaultStepMs);

/// Reads `ts_ms,value` CSV (header required). Non-numeric values are interned as strings.
std::vector<std::pair<Timestamp, SampleValue>> read_csv(const std::string& path);

/// {0.01, 0.02, ..., 0.99}
std::vector<double> phi_grid();

double relative_error(double estimate, double truth);
double mre(std::span<const std::pair<double, double>> pairs);

/// Largest distance between phi and the empirical CDF interval [F(x-), F(x)] of each estimate,
/// taken against the exact sorted window. Ties in the window count as a plateau, not a miss.
double ks_error(std::span<const double> phis, std::span<const double> estimates, std::span<const double> sorted_window);

/// Distance (in items) from target_rank to the rank interval of x in sorted_window.
double rank_distance(double x, double target_rank, std::span<const double> sorted_window);

/// Fraction of the exact top-k tokens that appear in the estimated list.
double topk_recall(std::span<const std::pair<Token, double>> estimated, std::span<const std::pair<Token, std::uint64_t>> exact);

// Reference statistics, written independently of the query engine's exact path.
namespace reference {

double quantile(std::span<const double> sorted, double phi);
double sum(std::span<const double> values);
double mean(std::span<const double> values);
double variance(std::span<const double> values);  // n - 1 denominator
/// Frequencies sorted by token.
std::vector<std::pair<Token, std::uint64_t>> frequencies(std::span<const Token> tokens);
double distinct(std::span<const Token> tokens);
double l2(std::span<const Token> tokens);
double entropy(std::span<const Token> tokens);
/// Ties broken by smaller token.
std::vector<std::pair<Token, std::uint64_t>> topk(std::span<const Token> tokens, std::size_t k);

}  // namespace reference

struct AccuracyReport {
    std::string stat;
    Timestamp window_start = 0;
    Timestamp window_end = 0;
    double estimate = 0.0;
    double truth = 0.0;
    double rel_err = 0.0;
    std::string extra;
};

void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const AccuracyReport& r);

}  // namespace promsketch::harness

#endif  // PROMSKETCH_HARNESS_HPP
