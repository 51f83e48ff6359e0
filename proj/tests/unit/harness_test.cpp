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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "promsketch/harness.hpp"

using namespace promsketch;
using namespace promsketch::harness;

TEST(Harness, MreExamples) {
    const std::vector<std::pair<double, double>> one{{1, 1}};
    EXPECT_EQ(mre(one), 0.0);
    const std::vector<std::pair<double, double>> two{{1.1, 1.0}, {0.9, 1.0}};
    EXPECT_NEAR(mre(two), 0.1, 1e-12);
    EXPECT_THROW(mre(std::span<const std::pair<double, double>>{}), Error);
    EXPECT_EQ(relative_error(1e-13, 0.0), 1e-13 / 1e-12);
}

TEST(Harness, PhiGrid) {
    const auto g = phi_grid();
    ASSERT_EQ(g.size(), 99u);
    EXPECT_DOUBLE_EQ(g.front(), 0.01);
    EXPECT_DOUBLE_EQ(g.back(), 0.99);
}

TEST(Harness, KsOfExactQuantilesIsAtMostOneOverN) {
    std::mt19937_64 rng(1);
    const auto grid = phi_grid();
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 500;
        std::vector<double> w(n);
        for (auto& v : w) v = static_cast<double>(rng() % (1 + trial));
        std::sort(w.begin(), w.end());
        std::vector<double> est;
        for (double phi : grid) est.push_back(reference::quantile(w, phi));
        EXPECT_LE(ks_error(grid, est, w), 1.0 / static_cast<double>(n) + 1e-12) << n;
    }
}

TEST(Harness, KsOfConstantWindow) {
    const std::vector<double> w(1000, 7.0);
    const auto grid = phi_grid();
    const std::vector<double> est(grid.size(), 7.0);
    EXPECT_LE(ks_error(grid, est, w), 1.0 / 1000);
    EXPECT_THROW(ks_error(grid, est, std::span<const double>{}), Error);
}

TEST(Harness, KsDetectsAShiftedEstimate) {
    std::vector<double> w(100);
    for (int i = 0; i < 100; ++i) w[static_cast<std::size_t>(i)] = i;
    const std::vector<double> phis{0.5};
    const std::vector<double> est{79.0};  // CDF plateau [0.79, 0.80] where 0.5 was asked
    EXPECT_NEAR(ks_error(phis, est, w), 0.29, 1e-12);
}

TEST(Harness, TopkRecall) {
    const std::vector<std::pair<Token, std::uint64_t>> exact{{1, 9}, {2, 8}, {3, 7}, {4, 6}};
    const std::vector<std::pair<Token, double>> est{{1, 9}, {3, 7}, {9, 6}, {2, 5}};
    EXPECT_DOUBLE_EQ(topk_recall(est, exact), 0.75);
}

TEST(Harness, GenerateIsDeterministicAndSpaced) {
    for (auto kind : {DatasetKind::kZipf, DatasetKind::kUniform, DatasetKind::kDynamic}) {
        const auto a = generate(kind, 5000, 42);
        const auto b = generate(kind, 5000, 42);
        const auto c = generate(kind, 5000, 43);
        ASSERT_EQ(a.size(), 5000u);
        bool same = true, differs = false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            same &= a[i].ts == b[i].ts && a[i].value == b[i].value;
            differs |= a[i].value != c[i].value;
            EXPECT_EQ(a[i].ts, static_cast<Timestamp>(i) * kDefaultStepMs);
            EXPECT_GE(a[i].value, 0.0);
            EXPECT_LE(a[i].value, 100000.0);
            EXPECT_EQ(a[i].value, std::round(a[i].value));
        }
        EXPECT_TRUE(same);
        EXPECT_TRUE(differs);
    }
    EXPECT_THROW(generate(DatasetKind::kZipf, 0, 1), Error);
}

TEST(Harness, ZipfHeadIsHeavy) {
    const auto s = generate(DatasetKind::kZipf, 1'000'000, 7);
    std::map<double, std::size_t> freq;
    for (const auto& p : s) ++freq[p.value];
    std::size_t top = 0;
    for (const auto& [v, c] : freq) top = std::max(top, c);
    const double share = static_cast<double>(top) / 1e6;
    EXPECT_GE(share, 100.0 / static_cast<double>(kValueSupport));
    // Pr(0) for exponent 1.01 over 100001 values, from the closed-form normalizer.
    double z = 0;
    for (std::size_t k = 0; k < kValueSupport; ++k) z += std::pow(1.0 + static_cast<double>(k), -1.01);
    EXPECT_NEAR(static_cast<double>(freq[0.0]) / 1e6, 1.0 / z, 5 * std::sqrt((1.0 / z) / 1e6));
}

TEST(Harness, DynamicRotatesEveryMillionPoints) {
    const auto s = generate(DatasetKind::kDynamic, 3'000'000, 5);
    ASSERT_EQ(s.size(), 3'000'000u);
    auto phase = [&](std::size_t p) {
        return std::span<const StreamPoint>(s.data() + p * kDynamicPhaseLength, kDynamicPhaseLength);
    };
    auto stats = [](std::span<const StreamPoint> xs) {
        double m = 0, v = 0;
        std::size_t zeros = 0;
        for (const auto& x : xs) m += x.value, zeros += x.value == 0.0;
        m /= static_cast<double>(xs.size());
        for (const auto& x : xs) v += (x.value - m) * (x.value - m);
        return std::tuple{m, std::sqrt(v / static_cast<double>(xs.size())), zeros};
    };
    const auto [zm, zs, zz] = stats(phase(0));
    const auto [um, us, uz] = stats(phase(1));
    const auto [nm, ns, nz] = stats(phase(2));
    EXPECT_GT(zz, 50'000u);  // zipf head
    EXPECT_NEAR(um, 50000, 300);
    EXPECT_NEAR(us, 100001 / std::sqrt(12.0), 300);
    EXPECT_NEAR(nm, 50000, 100);
    EXPECT_NEAR(ns, 10000, 100);
    // The boundary is sharp: the last zipf point block still has its head, the first uniform block does not.
    std::size_t head_before = 0, head_after = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        head_before += s[kDynamicPhaseLength - 1 - i].value == 0.0;
        head_after += s[kDynamicPhaseLength + i].value == 0.0;
    }
    EXPECT_GT(head_before, 20u);
    EXPECT_EQ(head_after, 0u);
    (void)zm, (void)zs, (void)uz, (void)nz;
}

TEST(Harness, ReferenceStatistics) {
    const std::vector<double> v{1, 2, 3};
    EXPECT_EQ(reference::quantile(v, 0.5), 2.0);
    EXPECT_EQ(reference::sum(v), 6.0);
    EXPECT_EQ(reference::mean(v), 2.0);
    EXPECT_EQ(reference::variance(v), 1.0);
    const std::vector<Token> aabb{1, 1, 2, 2};
    EXPECT_EQ(reference::entropy(aabb), 1.0);
    const std::vector<Token> aaa{5, 5, 5};
    EXPECT_EQ(reference::distinct(aaa), 1.0);
    EXPECT_EQ(reference::l2(aaa), 3.0);
    const std::vector<Token> mix{3, 1, 3, 2, 2, 3};
    const auto top = reference::topk(mix, 2);
    ASSERT_EQ(top.size(), 2u);
    EXPECT_EQ(top[0], (std::pair<Token, std::uint64_t>{3, 3}));
    EXPECT_EQ(top[1], (std::pair<Token, std::uint64_t>{2, 2}));
}

TEST(Harness, CsvReaderAndReportSchema) {
    const auto path = std::filesystem::temp_directory_path() / "promsketch_harness_test.csv";
    {
        std::ofstream out(path);
        out << "ts_ms,value\n100,1.5\n200,alpha\n300,-2\n";
    }
    const auto rows = read_csv(path.string());
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].first, 100);
    EXPECT_EQ(std::get<double>(rows[0].second), 1.5);
    EXPECT_EQ(std::get<std::string>(rows[1].second), "alpha");
    EXPECT_EQ(std::get<double>(rows[2].second), -2.0);
    std::filesystem::remove(path);

    std::ostringstream csv;
    write_csv_header(csv);
    write_csv_row(csv, {"entropy", 0, 100, 1.5, 1.0, 0.5, "k=20"});
    EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "stat,window_start,window_end,estimate,truth,rel_err,extra");
}
