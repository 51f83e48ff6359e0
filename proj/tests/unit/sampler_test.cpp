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

#include <cmath>
#include <random>

#include "promsketch/harness.hpp"
#include "promsketch/sampler.hpp"

using namespace promsketch;

TEST(SampleWindow, ExactWhenPIsOne) {
    SampleWindow s(1.0, 1000, 1);
    for (int i = 1; i <= 3; ++i) EXPECT_TRUE(s.insert(i, i));
    const TimeWindow q{0, 3};
    EXPECT_EQ(s.query(q, SampleStat::kAvg), 2.0);
    EXPECT_EQ(s.query(q, SampleStat::kSum), 6.0);
    EXPECT_EQ(s.query(q, SampleStat::kCount), 3.0);
    EXPECT_EQ(s.query(q, SampleStat::kStdvar), 1.0);
    EXPECT_EQ(s.query(q, SampleStat::kStddev), 1.0);
}

TEST(SampleWindow, Errors) {
    SampleWindow s(1.0, 1000, 1);
    s.insert(10, 1.0);
    EXPECT_THROW(s.insert(9, 1.0), Error);
    EXPECT_THROW(s.insert(11, INFINITY), Error);
    try {
        s.query({0, 10}, SampleStat::kStdvar);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kInsufficientSamples);
    }
    s.insert(20, 2.0);
    try {
        s.query({10, 19}, SampleStat::kAvg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kEmptyRange);
    }
    EXPECT_EQ(s.query({10, 19}, SampleStat::kCount), 0.0);
    EXPECT_THROW(SampleWindow(0.0, 10, 1), Error);
}

TEST(SampleWindow, AdmissionIsBinomial) {
    SampleWindow s(0.1, 1LL << 40, 7);
    const int n = 1000000;
    for (int i = 0; i < n; ++i) s.insert(i, 1.0);
    const double mean = n * 0.1;
    const double sigma = std::sqrt(n * 0.1 * 0.9);
    EXPECT_NEAR(static_cast<double>(s.size()), mean, 3 * sigma);
}

TEST(SampleWindowProperty, EvictionKeepsOnlyInWindowSamples) {
    std::mt19937_64 rng(3);
    SampleWindow s(0.5, 250, 3);
    Timestamp t = 0;
    for (int i = 0; i < 20000; ++i) {
        t += static_cast<Timestamp>(rng() % 5);
        s.insert(t, 1.0);
        if (!s.samples().empty()) ASSERT_GT(s.samples().front().first, s.now() - s.span());
        for (std::size_t j = 1; j < s.samples().size() && j < 3; ++j)
            ASSERT_LE(s.samples()[j - 1].first, s.samples()[j].first);
    }
}

TEST(SampleWindowProperty, PIsOneMatchesOracleOnSubWindows) {
    std::mt19937_64 rng(4);
    auto stream = harness::generate(harness::DatasetKind::kDynamic, 20000, 4);
    SampleWindow s(1.0, 1LL << 40, 4);
    std::vector<double> values;
    for (const auto& p : stream) {
        s.insert(p.ts, p.value);
        values.push_back(p.value);
    }
    for (int c = 0; c < 200; ++c) {
        const std::size_t a = rng() % (values.size() - 3);
        const std::size_t b = a + 2 + rng() % (values.size() - a - 2);
        const TimeWindow q{stream[a].ts, stream[b].ts};
        std::span<const double> sub(values.data() + a + 1, b - a);
        EXPECT_EQ(s.query(q, SampleStat::kSum), harness::reference::sum(sub));
        EXPECT_EQ(s.query(q, SampleStat::kCount), static_cast<double>(sub.size()));
        EXPECT_NEAR(s.query(q, SampleStat::kAvg), harness::reference::mean(sub), 1e-9 * std::abs(harness::reference::mean(sub)));
        const double var = harness::reference::variance(sub);
        EXPECT_NEAR(s.query(q, SampleStat::kStdvar), var, 1e-9 * var);
        EXPECT_NEAR(s.query(q, SampleStat::kStddev), std::sqrt(var), 1e-9 * std::sqrt(var));
    }
}

TEST(SampleWindowProperty, SumAndCountUnbiased) {
    const int runs = 200, n = 5000;
    std::vector<double> values(n);
    std::mt19937_64 rng(9);
    for (auto& v : values) v = static_cast<double>(rng() % 1000);
    const double true_sum = harness::reference::sum(values);
    std::vector<double> sums, counts;
    for (int r = 0; r < runs; ++r) {
        SampleWindow s(0.1, 1LL << 40, 1000 + r);
        for (int i = 0; i < n; ++i) s.insert(i + 1, values[i]);
        sums.push_back(s.query({0, n}, SampleStat::kSum));
        counts.push_back(s.query({0, n}, SampleStat::kCount));
    }
    auto check = [&](const std::vector<double>& xs, double truth) {
        const double mean = harness::reference::mean(xs);
        const double se = std::sqrt(harness::reference::variance(xs) / xs.size());
        EXPECT_LE(std::abs(mean - truth), 3 * se);
    };
    check(sums, true_sum);
    check(counts, n);
}

TEST(SampleWindow, SerializationRoundTrip) {
    SampleWindow s(0.3, 5000, 11);
    for (int i = 1; i <= 3000; ++i) s.insert(i * 3, std::sin(i));
    ByteWriter w;
    s.serialize(w);
    EXPECT_EQ(w.size(), s.serialized_size());
    ByteReader r(w.bytes());
    auto back = SampleWindow::deserialize(r);
    EXPECT_TRUE(r.done());
    EXPECT_EQ(back.samples(), s.samples());
    for (int i = 3001; i <= 3500; ++i) EXPECT_EQ(back.insert(i * 3, 1.0), s.insert(i * 3, 1.0));
}
