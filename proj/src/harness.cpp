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

#include "promsketch/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

namespace promsketch::harness {

DatasetKind parse_dataset(std::string_view name) {
    if (name == "zipf") return DatasetKind::kZipf;
    if (name == "uniform") return DatasetKind::kUniform;
    if (name == "dynamic") return DatasetKind::kDynamic;
    throw Error(ErrorCode::kInvalidArgument, "unknown dataset '" + std::string(name) + "'");
}

std::string_view to_string(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::kZipf: return "zipf";
        case DatasetKind::kUniform: return "uniform";
        case DatasetKind::kDynamic: return "dynamic";
    }
    return "unknown";
}

ZipfDistribution::ZipfDistribution(std::size_t support, double exponent) {
    if (support == 0) throw Error(ErrorCode::kInvalidArgument, "zipf support must be nonempty");
    cdf_.resize(support);
    double acc = 0.0;
    for (std::size_t k = 0; k < support; ++k) {
        acc += std::pow(static_cast<double>(k + 1), -exponent);
        cdf_[k] = acc;
    }
    for (double& c : cdf_) c /= acc;
    cdf_.back() = 1.0;
}

std::uint64_t ZipfDistribution::operator()(std::mt19937_64& rng) const {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<std::uint64_t>(std::min<std::size_t>(it - cdf_.begin(), cdf_.size() - 1));
}

double ZipfDistribution::probability(std::uint64_t k) const {
    if (k >= cdf_.size()) return 0.0;
    return k == 0 ? cdf_[0] : cdf_[k] - cdf_[k - 1];
}

std::vector<StreamPoint> generate(DatasetKind kind, std::size_t n, std::uint64_t seed, Timestamp start_ts,
                                  Timestamp step_ms) {
    if (n == 0) throw Error(ErrorCode::kInvalidArgument, "stream length must be positive");
    std::mt19937_64 rng(seed);
    static const ZipfDistribution zipf;
    std::uniform_int_distribution<std::uint64_t> uniform(0, kValueSupport - 1);
    std::normal_distribution<double> normal(50000.0, 10000.0);
    std::vector<StreamPoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        enum class Phase { kZipf, kUniform, kNormal };
        Phase phase = kind == DatasetKind::kZipf ? Phase::kZipf : Phase::kUniform;
        if (kind == DatasetKind::kDynamic) phase = static_cast<Phase>((i / kDynamicPhaseLength) % 3);
        double v = 0.0;
        switch (phase) {
            case Phase::kZipf: v = static_cast<double>(zipf(rng)); break;
            case Phase::kUniform: v = static_cast<double>(uniform(rng)); break;
            case Phase::kNormal:
                v = std::clamp(std::round(normal(rng)), 0.0, static_cast<double>(kValueSupport - 1));
                break;
        }
        out.push_back({start_ts + static_cast<Timestamp>(i) * step_ms, v});
    }
    return out;
}

std::vector<std::pair<Timestamp, SampleValue>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::kParseError, path + ": missing header");
    std::vector<std::pair<Timestamp, SampleValue>> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw Error(ErrorCode::kParseError, path + ":" + std::to_string(lineno) + ": expected ts,value");
        Timestamp ts = 0;
        auto [p, ec] = std::from_chars(line.data(), line.data() + comma, ts);
        if (ec != std::errc() || p != line.data() + comma)
            throw Error(ErrorCode::kParseError, path + ":" + std::to_string(lineno) + ": bad timestamp");
        std::string_view raw(line.data() + comma + 1, line.size() - comma - 1);
        double v = 0.0;
        auto [q, ec2] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
        if (ec2 == std::errc() && q == raw.data() + raw.size())
            out.emplace_back(ts, v);
        else
            out.emplace_back(ts, std::string(raw));
    }
    return out;
}

std::vector<double> phi_grid() {
    std::vector<double> grid;
    for (int i = 1; i <= 99; ++i) grid.push_back(i / 100.0);
    return grid;
}

double relative_error(double estimate, double truth) {
    return std::abs(estimate - truth) / std::max(std::abs(truth), 1e-12);
}

double mre(std::span<const std::pair<double, double>> pairs) {
    if (pairs.empty()) throw Error(ErrorCode::kInvalidArgument, "mre of an empty set");
    double total = 0.0;
    for (const auto& [est, truth] : pairs) total += relative_error(est, truth);
    return total / static_cast<double>(pairs.size());
}

double rank_distance(double x, double target_rank, std::span<const double> sorted_window) {
    const auto lo = static_cast<double>(std::lower_bound(sorted_window.begin(), sorted_window.end(), x) - sorted_window.begin());
    const auto hi = static_cast<double>(std::upper_bound(sorted_window.begin(), sorted_window.end(), x) - sorted_window.begin());
    if (target_rank < lo) return lo - target_rank;
    if (target_rank > hi) return target_rank - hi;
    return 0.0;
}

double ks_error(std::span<const double> phis, std::span<const double> estimates, std::span<const double> sorted_window) {
    if (sorted_window.empty()) throw Error(ErrorCode::kEmptyRange, "ks_error over an empty window");
    if (phis.empty() || phis.size() != estimates.size()) throw Error(ErrorCode::kInvalidArgument, "phi grid and estimates differ in size");
    const double n = static_cast<double>(sorted_window.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < phis.size(); ++i)
        worst = std::max(worst, rank_distance(estimates[i], phis[i] * n, sorted_window) / n);
    return worst;
}

double topk_recall(std::span<const std::pair<Token, double>> estimated, std::span<const std::pair<Token, std::uint64_t>> exact) {
    if (exact.empty()) return 1.0;
    std::unordered_set<Token> got;
    for (const auto& e : estimated) got.insert(e.first);
    std::size_t hit = 0;
    for (const auto& e : exact) hit += got.count(e.first);
    return static_cast<double>(hit) / static_cast<double>(exact.size());
}

namespace reference {

double quantile(std::span<const double> sorted, double phi) {
    if (sorted.empty()) throw Error(ErrorCode::kEmptyRange, "quantile of an empty window");
    const auto n = static_cast<long double>(sorted.size());
    long double want = static_cast<long double>(phi) * n;
    want -= want * 1e-12L;
    std::size_t rank = want <= 1 ? 1 : static_cast<std::size_t>(std::ceil(want));
    rank = std::min(rank, sorted.size());
    return sorted[rank - 1];
}

double sum(std::span<const double> values) {
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
}

double mean(std::span<const double> values) {
    if (values.empty()) throw Error(ErrorCode::kEmptyRange, "mean of an empty window");
    return sum(values) / static_cast<double>(values.size());
}

double variance(std::span<const double> values) {
    if (values.size() < 2) throw Error(ErrorCode::kInsufficientSamples, "variance needs two samples");
    const double m = mean(values);
    double acc = 0.0;
    for (double v : values) acc += (v - m) * (v - m);
    return acc / static_cast<double>(values.size() - 1);
}

std::vector<std::pair<Token, std::uint64_t>> frequencies(std::span<const Token> tokens) {
    std::vector<Token> sorted(tokens.begin(), tokens.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::pair<Token, std::uint64_t>> out;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        out.emplace_back(sorted[i], j - i);
        i = j;
    }
    return out;
}

double distinct(std::span<const Token> tokens) { return static_cast<double>(frequencies(tokens).size()); }

double l2(std::span<const Token> tokens) {
    double acc = 0.0;
    for (const auto& [t, f] : frequencies(tokens)) acc += static_cast<double>(f) * static_cast<double>(f);
    return std::sqrt(acc);
}

double entropy(std::span<const Token> tokens) {
    if (tokens.empty()) throw Error(ErrorCode::kEmptyRange, "entropy of an empty window");
    const double n = static_cast<double>(tokens.size());
    double acc = 0.0;
    for (const auto& [t, f] : frequencies(tokens)) {
        const double x = static_cast<double>(f);
        acc += x * std::log2(x);
    }
    return std::max(0.0, std::log2(n) - acc / n);
}

std::vector<std::pair<Token, std::uint64_t>> topk(std::span<const Token> tokens, std::size_t k) {
    auto freq = frequencies(tokens);
    std::stable_sort(freq.begin(), freq.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (freq.size() > k) freq.resize(k);
    return freq;
}

}  // namespace reference

void write_csv_header(std::ostream& out) { out << "stat,window_start,window_end,estimate,truth,rel_err,extra\n"; }

void write_csv_row(std::ostream& out, const AccuracyReport& r) {
    // Shortest round-trip form, so a report reproduces the exact doubles.
    auto num = [](double v) {
        char buf[32];
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, p);
    };
    out << r.stat << ',' << r.window_start << ',' << r.window_end << ',' << num(r.estimate) << ',' << num(r.truth)
        << ',' << num(r.rel_err) << ',' << r.extra << '\n';
}

}  // namespace promsketch::harness
