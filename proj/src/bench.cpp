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

#include "promsketch/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>

#include "promsketch/ehkll.hpp"
#include "promsketch/ehuniv.hpp"
#include "promsketch/sampler.hpp"

namespace promsketch::bench {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Point {
    Timestamp ts;
    SampleValue value;
};

struct QueryWindow {
    std::string level;
    std::size_t first;  // index range [first, last)
    std::size_t last;
    TimeWindow time;
};

std::vector<Point> load(const Options& o) {
    std::vector<Point> out;
    if (o.dataset == "file") {
        if (o.file.empty()) throw Error(ErrorCode::kInvalidArgument, "dataset 'file' needs a CSV path");
        for (auto& [ts, v] : harness::read_csv(o.file)) {
            // Only strictly increasing timestamps are ingestible; stragglers are dropped up front.
            if (!out.empty() && ts <= out.back().ts) continue;
            out.push_back({ts, std::move(v)});
        }
        if (out.empty()) throw Error(ErrorCode::kInvalidArgument, o.file + " holds no samples");
        return out;
    }
    const auto kind = harness::parse_dataset(o.dataset);
    for (const auto& p : harness::generate(kind, o.n, o.seed)) out.push_back({p.ts, p.value});
    return out;
}

std::vector<QueryWindow> drill_down(const std::vector<Point>& pts, std::size_t window) {
    const std::size_t n = pts.size();
    auto make = [&](std::string level, std::size_t a, std::size_t b) {
        const Timestamp start = a > 0 ? pts[a - 1].ts : pts[a].ts - 1;
        return QueryWindow{std::move(level), a, b, TimeWindow(start, pts[b - 1].ts)};
    };
    std::vector<QueryWindow> out{make("whole", n - window, n)};
    auto split = [&](const std::string& level, std::size_t a, std::size_t b) {
        const std::size_t len = b - a;
        if (len < 10) return;
        for (std::size_t i = 0; i < 10; ++i) out.push_back(make(level, a + len * i / 10, a + len * (i + 1) / 10));
    };
    split("tenth", n - window, n);
    split("hundredth", n - window / 10, n);
    return out;
}

class Recorder {
  public:
    Recorder(Report& report, AlgoSummary& summary) : report_(report), summary_(summary) {}

    void add(const QueryWindow& w, std::string stat, double estimate, double truth, double rel_err, std::string extra = {}) {
        report_.rows.push_back({stat, w.time.start, w.time.end, estimate, truth, rel_err,
                                "algo=" + std::string(to_string(summary_.algo)) + ";level=" + w.level +
                                    (extra.empty() ? "" : ";" + extra)});
        auto& acc = acc_[{stat, w.level}];
        acc.first += rel_err;
        acc.second += 1;
    }
    void add(const QueryWindow& w, std::string stat, double estimate, double truth) {
        add(w, std::move(stat), estimate, truth, harness::relative_error(estimate, truth));
    }

    void finish() {
        for (const auto& [key, acc] : acc_)
            summary_.stats.push_back({key.first, key.second, acc.first / static_cast<double>(acc.second), acc.second});
    }

  private:
    Report& report_;
    AlgoSummary& summary_;
    std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> acc_;
};

std::vector<double> numeric_values(const std::vector<Point>& pts, std::size_t a, std::size_t b) {
    std::vector<double> v;
    for (std::size_t i = a; i < b; ++i)
        if (const auto* d = std::get_if<double>(&pts[i].value)) v.push_back(*d);
    return v;
}

void run_ehkll(const Options& o, const std::vector<Point>& pts, const std::vector<QueryWindow>& windows, Timestamp span,
               Report& report, AlgoSummary& summary) {
    EhKll eh(o.quantile, span);
    auto t0 = Clock::now();
    std::size_t inserted = 0;
    for (const auto& p : pts)
        if (const auto* d = std::get_if<double>(&p.value)) eh.insert(p.ts, *d), ++inserted;
    summary.inserts_per_sec = static_cast<double>(inserted) / std::max(1e-9, seconds_since(t0));
    summary.bytes = eh.serialized_size();

    Recorder rec(report, summary);
    const auto grid = harness::phi_grid();
    double query_secs = 0.0;
    std::size_t queries = 0;
    for (const auto& w : windows) {
        auto truth = numeric_values(pts, w.first, w.last);
        if (truth.empty()) continue;
        std::sort(truth.begin(), truth.end());
        std::vector<double> est(grid.size());
        t0 = Clock::now();
        for (std::size_t i = 0; i < grid.size(); ++i) est[i] = eh.query(w.time, grid[i]);
        query_secs += seconds_since(t0);
        queries += grid.size();
        const double ks = harness::ks_error(grid, est, truth);
        rec.add(w, "ks", ks, 0.0, ks, "grid=0.01..0.99");
        for (const double phi : {0.5, 0.9, 0.99}) {
            const auto idx = static_cast<std::size_t>(std::lround(phi * 100)) - 1;
            rec.add(w, phi == 0.5 ? "quantile_0.5" : phi == 0.9 ? "quantile_0.9" : "quantile_0.99", est[idx],
                    harness::reference::quantile(truth, phi));
        }
    }
    summary.queries_per_sec = static_cast<double>(queries) / std::max(1e-9, query_secs);
    rec.finish();
}

void run_ehuniv(const Options& o, const std::vector<Point>& pts, const std::vector<QueryWindow>& windows,
                Timestamp span, Report& report, AlgoSummary& summary) {
    auto& interner = TokenInterner::global();
    std::vector<Token> tokens;
    tokens.reserve(pts.size());
    for (const auto& p : pts) tokens.push_back(interner.token_for(p.value));
    EhUniv eh(o.gsum, span);
    auto t0 = Clock::now();
    for (std::size_t i = 0; i < pts.size(); ++i) eh.insert(pts[i].ts, tokens[i]);
    summary.inserts_per_sec = static_cast<double>(pts.size()) / std::max(1e-9, seconds_since(t0));
    summary.bytes = eh.serialized_size();

    Recorder rec(report, summary);
    double query_secs = 0.0;
    std::size_t queries = 0;
    for (const auto& w : windows) {
        const std::span<const Token> truth(tokens.data() + w.first, w.last - w.first);
        t0 = Clock::now();
        const double distinct = eh.query(w.time, GsumStat::kL0);
        const double entropy = eh.query(w.time, GsumStat::kEntropy);
        const double l2 = eh.query(w.time, GsumStat::kL2);
        const auto top = eh.topk(w.time, o.topk);
        query_secs += seconds_since(t0);
        queries += 4;
        rec.add(w, "distinct", distinct, harness::reference::distinct(truth));
        rec.add(w, "entropy", entropy, harness::reference::entropy(truth));
        rec.add(w, "l2", l2, harness::reference::l2(truth));
        const double recall = harness::topk_recall(top, harness::reference::topk(truth, o.topk));
        rec.add(w, "topk_recall", recall, 1.0, 1.0 - recall, "k=" + std::to_string(o.topk));
    }
    summary.queries_per_sec = static_cast<double>(queries) / std::max(1e-9, query_secs);
    rec.finish();
}

void run_sampler(const Options& o, const std::vector<Point>& pts, const std::vector<QueryWindow>& windows,
                 Timestamp span, Report& report, AlgoSummary& summary) {
    SampleWindow s(o.sample.sample_prob, span, seeded_hash(o.seed, o.sample.seed));
    auto t0 = Clock::now();
    std::size_t inserted = 0;
    for (const auto& p : pts)
        if (const auto* d = std::get_if<double>(&p.value)) s.insert(p.ts, *d), ++inserted;
    summary.inserts_per_sec = static_cast<double>(inserted) / std::max(1e-9, seconds_since(t0));
    summary.bytes = s.serialized_size();

    Recorder rec(report, summary);
    double query_secs = 0.0;
    std::size_t queries = 0;
    const std::pair<SampleStat, const char*> stats[] = {{SampleStat::kCount, "count"}, {SampleStat::kSum, "sum"},
                                                        {SampleStat::kAvg, "avg"},     {SampleStat::kStddev, "stddev"},
                                                        {SampleStat::kStdvar, "stdvar"}};
    for (const auto& w : windows) {
        const auto values = numeric_values(pts, w.first, w.last);
        if (values.size() < 2) continue;
        const double var = harness::reference::variance(values);
        for (const auto& [stat, name] : stats) {
            double truth = 0.0;
            switch (stat) {
                case SampleStat::kCount: truth = static_cast<double>(values.size()); break;
                case SampleStat::kSum: truth = harness::reference::sum(values); break;
                case SampleStat::kAvg: truth = harness::reference::mean(values); break;
                case SampleStat::kStddev: truth = std::sqrt(var); break;
                case SampleStat::kStdvar: truth = var; break;
            }
            t0 = Clock::now();
            try {
                const double est = s.query(w.time, stat);
                query_secs += seconds_since(t0);
                rec.add(w, name, est, truth);
            } catch (const Error& e) {
                // Too few retained samples in a small window: counted as a full miss.
                query_secs += seconds_since(t0);
                rec.add(w, name, std::nan(""), truth, 1.0, "error=" + std::string(to_string(e.code())));
            }
            ++queries;
        }
    }
    summary.queries_per_sec = static_cast<double>(queries) / std::max(1e-9, query_secs);
    rec.finish();
}

}  // namespace

std::string_view to_string(Algo a) {
    switch (a) {
        case Algo::kEhKll:
            return "ehkll";
        case Algo::kEhUniv:
            return "ehuniv";
        case Algo::kSampler:
            return "sampler";
    }
    return "?";
}

std::vector<Algo> parse_algos(std::string_view name) {
    if (name == "ehkll") return {Algo::kEhKll};
    if (name == "ehuniv") return {Algo::kEhUniv};
    if (name == "sampler") return {Algo::kSampler};
    if (name == "all") return {Algo::kEhKll, Algo::kEhUniv, Algo::kSampler};
    throw Error(ErrorCode::kInvalidArgument, "unknown algorithm '" + std::string(name) + "'");
}

Report run(const Options& o) {
    if (o.dataset != "file" && o.window == 0) throw Error(ErrorCode::kInvalidArgument, "window must be positive");
    if (o.dataset != "file" && o.n < o.window) throw Error(ErrorCode::kInvalidArgument, "n must be >= window");
    o.quantile.validate();
    o.gsum.validate();
    o.sample.validate();
    const auto pts = load(o);
    // A file run with no window uses the whole trace.
    const std::size_t window = o.window == 0 ? pts.size() : o.window;
    if (pts.size() < window) throw Error(ErrorCode::kInvalidArgument, "stream shorter than the window");
    const auto windows = drill_down(pts, window);
    const Timestamp span = windows.front().time.span();

    Report report;
    report.points = pts.size();
    for (const auto algo : o.algos) {
        AlgoSummary summary;
        summary.algo = algo;
        switch (algo) {
            case Algo::kEhKll: run_ehkll(o, pts, windows, span, report, summary); break;
            case Algo::kEhUniv: run_ehuniv(o, pts, windows, span, report, summary); break;
            case Algo::kSampler: run_sampler(o, pts, windows, span, report, summary); break;
        }
        report.algos.push_back(std::move(summary));
    }
    return report;
}

void write_csv(std::ostream& out, const Report& report) {
    harness::write_csv_header(out);
    for (const auto& r : report.rows) harness::write_csv_row(out, r);
}

void write_summary(std::ostream& out, const Report& report) {
    out << "points: " << report.points << "\n";
    for (const auto& a : report.algos) {
        out << to_string(a.algo) << ": " << a.bytes << " bytes, " << std::fixed << std::setprecision(0)
            << a.inserts_per_sec << " inserts/s, " << a.queries_per_sec << " queries/s\n";
        out << std::setprecision(5);
        for (const auto& s : a.stats)
            out << "  " << std::left << std::setw(14) << s.stat << std::setw(10) << s.level << " mean error "
                << s.mean_error << " over " << s.windows << " windows\n";
        out << std::right;
        out.unsetf(std::ios::floatfield);
    }
}

}  // namespace promsketch::bench
