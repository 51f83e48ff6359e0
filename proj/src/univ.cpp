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

#include "promsketch/univ.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace promsketch {

namespace {

constexpr int kMaxRows = 31;
// Tracked frequencies must clear this many residual standard deviations. Tokens of a noisy layer
// are admitted on estimates while deeper tokens use exact counts; a wide margin keeps that
// asymmetry from biasing flat distributions, where most mass sits just under a 3-sigma cut.
constexpr double kNoiseMargin = 5.0;

double median_in_place(double* v, int n) {
    if (n == 1) return v[0];
    if (n == 3) {
        double a = v[0], b = v[1], c = v[2];
        return std::max(std::min(a, b), std::min(std::max(a, b), c));
    }
    std::sort(v, v + n);
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string_view to_string(GsumStat stat) {
    switch (stat) {
        case GsumStat::kL0: return "distinct";
        case GsumStat::kL1: return "l1";
        case GsumStat::kL2: return "l2";
        case GsumStat::kEntropy: return "entropy";
    }
    return "unknown";
}

CountSketch::CountSketch(int rows, int cols, std::uint64_t seed) : rows_(rows), cols_(cols) {
    if (rows <= 0 || rows > kMaxRows) throw Error(ErrorCode::kInvalidArgument, "count sketch rows out of range");
    if (cols <= 0 || (cols & (cols - 1))) throw Error(ErrorCode::kInvalidArgument, "count sketch cols must be a power of two");
    seeds_.reserve(2 * rows);
    for (int r = 0; r < 2 * rows; ++r) seeds_.push_back(seeded_hash(static_cast<std::uint64_t>(r), seed));
    counters_.assign(static_cast<std::size_t>(rows) * cols, 0);
}

std::size_t CountSketch::cell(int row, Token t, std::int64_t& sign) const noexcept {
    const std::uint64_t hb = seeded_hash(t, seeds_[2 * row]);
    const std::uint64_t hs = seeded_hash(t, seeds_[2 * row + 1]);
    sign = (hs >> 63) ? 1 : -1;
    return static_cast<std::size_t>(row) * cols_ + (hb & static_cast<std::uint64_t>(cols_ - 1));
}

void CountSketch::update(Token t, std::int64_t w) {
    for (int r = 0; r < rows_; ++r) {
        std::int64_t sign;
        counters_[cell(r, t, sign)] += sign * w;
    }
}

double CountSketch::update_and_estimate(Token t, std::int64_t w) {
    std::array<double, kMaxRows> est;
    for (int r = 0; r < rows_; ++r) {
        std::int64_t sign;
        auto& c = counters_[cell(r, t, sign)];
        c += sign * w;
        est[r] = static_cast<double>(sign * c);
    }
    return median_in_place(est.data(), rows_);
}

double CountSketch::estimate(Token t) const {
    std::array<double, kMaxRows> est;
    for (int r = 0; r < rows_; ++r) {
        std::int64_t sign;
        est[r] = static_cast<double>(sign * counters_[cell(r, t, sign)]);
    }
    return median_in_place(est.data(), rows_);
}

void CountSketch::merge(const CountSketch& other) {
    if (!compatible(other)) throw Error(ErrorCode::kMismatchedConfig, "count sketch shapes or seeds differ");
    for (std::size_t i = 0; i < counters_.size(); ++i) counters_[i] += other.counters_[i];
}

double CountSketch::inner_product(const CountSketch& other) const {
    if (!compatible(other)) throw Error(ErrorCode::kMismatchedConfig, "count sketch shapes or seeds differ");
    std::array<double, kMaxRows> dots;
    for (int r = 0; r < rows_; ++r) {
        long double acc = 0;
        const std::size_t base = static_cast<std::size_t>(r) * cols_;
        for (int c = 0; c < cols_; ++c)
            acc += static_cast<long double>(counters_[base + c]) * static_cast<long double>(other.counters_[base + c]);
        dots[r] = static_cast<double>(acc);
    }
    return median_in_place(dots.data(), rows_);
}

bool CountSketch::all_zero() const noexcept {
    return std::all_of(counters_.begin(), counters_.end(), [](std::int64_t c) { return c == 0; });
}

void CountSketch::serialize(ByteWriter& out) const { out.put_span<std::int64_t>(counters_); }

void CountSketch::deserialize_counters(ByteReader& in) { in.get_into<std::int64_t>(counters_); }

void HeavyHitters::swap_entries(std::size_t a, std::size_t b) {
    std::swap(heap_[a], heap_[b]);
    pos_[heap_[a].second] = a;
    pos_[heap_[b].second] = b;
}

void HeavyHitters::sift_up(std::size_t i) {
    while (i > 0) {
        std::size_t parent = (i - 1) / 2;
        if (heap_[parent].first <= heap_[i].first) break;
        swap_entries(i, parent);
        i = parent;
    }
}

void HeavyHitters::sift_down(std::size_t i) {
    for (;;) {
        std::size_t l = 2 * i + 1, r = l + 1, m = i;
        if (l < heap_.size() && heap_[l].first < heap_[m].first) m = l;
        if (r < heap_.size() && heap_[r].first < heap_[m].first) m = r;
        if (m == i) return;
        swap_entries(i, m);
        i = m;
    }
}

void HeavyHitters::offer(Token t, double estimate) {
    if (capacity_ == 0) return;
    if (auto it = pos_.find(t); it != pos_.end()) {
        std::size_t i = it->second;
        double old = heap_[i].first;
        heap_[i].first = estimate;
        if (estimate < old)
            sift_up(i);
        else
            sift_down(i);
        return;
    }
    if (heap_.size() < capacity_) {
        heap_.emplace_back(estimate, t);
        pos_[t] = heap_.size() - 1;
        sift_up(heap_.size() - 1);
        return;
    }
    lossless_ = false;
    if (estimate <= heap_[0].first) return;
    pos_.erase(heap_[0].second);
    heap_[0] = {estimate, t};
    pos_[t] = 0;
    sift_down(0);
}

void HeavyHitters::clear() {
    heap_.clear();
    pos_.clear();
    lossless_ = true;
}

std::size_t UnivSketch::hh_capacity_for(const SketchConfig& config) {
    const double inv = std::ceil(1.0 / (config.hh_epsilon * config.hh_epsilon));
    return static_cast<std::size_t>(std::min(2.0 * config.cs_rows * inv, 1024.0));
}

UnivSketch::UnivSketch(const SketchConfig& config) : config_(config) {
    config_.validate();
    const int layers = config_.univ_layers;
    const int top_layers = (layers + 1) / 2;
    const std::size_t cap = hh_capacity_for(config_);
    layer_seeds_.reserve(layers);
    layers_.reserve(layers);
    heaps_.reserve(layers);
    for (int j = 0; j < layers; ++j) {
        layer_seeds_.push_back(seeded_hash(0x1a7e5ULL + j, config_.seed));
        const int cols = j < top_layers ? config_.cs_cols_top : config_.cs_cols_bottom;
        layers_.emplace_back(config_.cs_rows, cols, seeded_hash(0xc5ULL + 131 * j, config_.seed));
        heaps_.emplace_back(cap);
    }
}

int UnivSketch::deepest_layer(Token t) const noexcept {
    const int layers = num_layers();
    for (int j = 1; j < layers; ++j)
        if ((seeded_hash(t, layer_seeds_[j]) & 1) == 0) return j - 1;
    return layers - 1;
}

double UnivSketch::update(Token t, std::int64_t w) {
    if (w < 1) throw Error(ErrorCode::kInvalidArgument, "update weight must be positive");
    const int d = deepest_layer(t);
    const double est = layers_[d].update_and_estimate(t, w);
    heaps_[d].offer(t, est);
    n_total_ += static_cast<std::uint64_t>(w);
    return est;
}

double UnivSketch::estimate(Token t) const { return layers_[deepest_layer(t)].estimate(t); }

bool UnivSketch::compatible(const UnivSketch& other) const noexcept {
    if (layers_.size() != other.layers_.size() || layer_seeds_ != other.layer_seeds_) return false;
    for (std::size_t j = 0; j < layers_.size(); ++j)
        if (!layers_[j].compatible(other.layers_[j])) return false;
    return heaps_.front().capacity() == other.heaps_.front().capacity();
}

void UnivSketch::merge(const UnivSketch& other) {
    if (!compatible(other)) throw Error(ErrorCode::kMismatchedConfig, "universal sketch configs differ");
    if (other.n_total_ == 0) return;
    if (n_total_ == 0) {
        *this = other;
        return;
    }
    for (std::size_t j = 0; j < layers_.size(); ++j) {
        layers_[j].merge(other.layers_[j]);
        std::vector<Token> pool;
        pool.reserve(heaps_[j].size() + other.heaps_[j].size());
        for (const auto& e : heaps_[j].entries()) pool.push_back(e.second);
        for (const auto& e : other.heaps_[j].entries()) pool.push_back(e.second);
        std::sort(pool.begin(), pool.end());
        pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
        const bool lossless = heaps_[j].lossless() && other.heaps_[j].lossless();
        heaps_[j].clear();
        for (Token t : pool) heaps_[j].offer(t, layers_[j].estimate(t));
        if (!lossless) heaps_[j].set_lossless(false);
    }
    n_total_ += other.n_total_;
}

double UnivSketch::inner_product(const UnivSketch& other) const {
    if (!compatible(other)) throw Error(ErrorCode::kMismatchedConfig, "universal sketch configs differ");
    double total = 0.0;
    for (std::size_t j = 0; j < layers_.size(); ++j) total += layers_[j].inner_product(other.layers_[j]);
    return total;
}

std::vector<UnivSketch::Resolved::Item> UnivSketch::decode_layer(int j, double& tau) const {
    const CountSketch& cs = layers_[j];
    const HeavyHitters& heap = heaps_[j];
    const int rows = cs.rows();
    const std::size_t n = heap.size();
    std::vector<Resolved::Item> items(n);
    std::vector<std::size_t> cells(n * rows);
    std::vector<std::int64_t> signs(n * rows);
    std::vector<std::int64_t> residual = cs.counters();
    for (std::size_t i = 0; i < n; ++i) {
        items[i] = {heap.entries()[i].second, 0.0, j};
        for (int r = 0; r < rows; ++r) cells[i * rows + r] = cs.cell(r, items[i].token, signs[i * rows + r]);
    }
    auto residual_median = [&](std::size_t i) {
        std::array<double, kMaxRows> est;
        for (int r = 0; r < rows; ++r)
            est[r] = static_cast<double>(signs[i * rows + r] * residual[cells[i * rows + r]]);
        return median_in_place(est.data(), rows);
    };
    auto subtract = [&](std::size_t i, std::int64_t f) {
        for (int r = 0; r < rows; ++r) residual[cells[i * rows + r]] -= signs[i * rows + r] * f;
    };

    std::vector<char> done(n, 0);
    if (heap.lossless()) {
        // The candidates are the whole support: any cell holding one unresolved token reads it exactly.
        std::vector<std::uint32_t> degree(residual.size(), 0);
        std::vector<std::uint64_t> xor_ids(residual.size(), 0);
        for (std::size_t i = 0; i < n; ++i)
            for (int r = 0; r < rows; ++r) {
                ++degree[cells[i * rows + r]];
                xor_ids[cells[i * rows + r]] ^= i;
            }
        std::vector<std::size_t> pure;
        for (std::size_t c = 0; c < degree.size(); ++c)
            if (degree[c] == 1) pure.push_back(c);
        while (!pure.empty()) {
            std::size_t c = pure.back();
            pure.pop_back();
            if (degree[c] != 1) continue;
            const std::size_t i = xor_ids[c];
            const int row = static_cast<int>(c / cs.cols());
            const std::int64_t f = signs[i * rows + row] * residual[c];
            items[i].freq = static_cast<double>(std::max<std::int64_t>(f, 0));
            done[i] = 1;
            subtract(i, f);
            for (int r = 0; r < rows; ++r) {
                const std::size_t cr = cells[i * rows + r];
                --degree[cr];
                xor_ids[cr] ^= i;
                if (degree[cr] == 1) pure.push_back(cr);
            }
        }
    }

    // Whatever the peel left: greedy re-estimation, heaviest first, on residual counters.
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i)
        if (!done[i]) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ea = heap.entries()[a];
        const auto& eb = heap.entries()[b];
        return ea.first != eb.first ? ea.first > eb.first : ea.second < eb.second;
    });
    for (std::size_t i : order) {
        const double f = std::max(0.0, std::round(residual_median(i)));
        items[i].freq = f;
        subtract(i, static_cast<std::int64_t>(f));
    }

    tau = 0.0;
    if (!order.empty() || !heap.lossless()) {
        std::array<double, kMaxRows> energy;
        for (int r = 0; r < rows; ++r) {
            long double acc = 0;
            for (int c = 0; c < cs.cols(); ++c) {
                const auto v = static_cast<long double>(residual[static_cast<std::size_t>(r) * cs.cols() + c]);
                acc += v * v;
            }
            energy[r] = static_cast<double>(acc);
        }
        const double sigma = std::sqrt(median_in_place(energy.data(), rows) / cs.cols());
        tau = kNoiseMargin * sigma;
        if (!heap.lossless()) tau = std::max(tau, heap.min_estimate());
    }
    return items;
}

UnivSketch::Resolved UnivSketch::resolve() const {
    Resolved out;
    out.threshold.assign(num_layers(), 0.0);
    for (int j = 0; j < num_layers(); ++j) {
        double tau = 0.0;
        auto items = decode_layer(j, tau);
        out.threshold[j] = tau;
        for (auto& item : items)
            if (item.freq >= 1.0) out.items.push_back(item);
    }
    for (int j = num_layers() - 2; j >= 0; --j) out.threshold[j] = std::max(out.threshold[j], out.threshold[j + 1]);
    std::sort(out.items.begin(), out.items.end(), [](const Resolved::Item& a, const Resolved::Item& b) {
        return a.freq != b.freq ? a.freq > b.freq : a.token < b.token;
    });
    return out;
}

double UnivSketch::gsum(const std::function<double(double)>& g) const {
    if (n_total_ == 0) return 0.0;
    const auto resolved = resolve();
    const int last = num_layers() - 1;
    // Y_j = 2 Y_{j+1} + sum_{t in H_j} (1 - 2[d(t) > j]) g(f_t), with
    // H_j = {t : d(t) >= j, f_t >= threshold_j}.
    std::vector<double> level_sum(num_layers(), 0.0);
    for (const auto& item : resolved.items) {
        const double gv = g(item.freq);
        for (int j = 0; j <= item.layer; ++j) {
            if (item.freq < resolved.threshold[j]) continue;
            level_sum[j] += item.layer > j ? -gv : gv;
        }
    }
    double y = level_sum[last];
    for (int j = last - 1; j >= 0; --j) y = 2.0 * y + level_sum[j];
    return std::max(0.0, y);
}

double UnivSketch::gsum(GsumStat stat) const {
    switch (stat) {
        case GsumStat::kL0:
            return gsum([](double f) { return f >= 1.0 ? 1.0 : 0.0; });
        case GsumStat::kL1:
            return gsum([](double f) { return f; });
        case GsumStat::kL2:
            return std::sqrt(gsum([](double f) { return f * f; }));
        case GsumStat::kEntropy: {
            if (n_total_ == 0) throw Error(ErrorCode::kEmptySketch, "entropy of an empty sketch");
            const double n = static_cast<double>(n_total_);
            const double g = gsum([](double f) { return f >= 1.0 ? f * std::log2(f) : 0.0; });
            return std::max(0.0, std::log2(n) - g / n);
        }
    }
    return 0.0;
}

std::vector<std::pair<Token, double>> UnivSketch::topk(std::size_t k) const {
    if (k == 0) throw Error(ErrorCode::kInvalidArgument, "topk requires k >= 1");
    std::vector<std::pair<Token, double>> out;
    for (const auto& item : resolve().items) {
        if (out.size() == k) break;
        out.emplace_back(item.token, item.freq);
    }
    return out;
}

void UnivSketch::serialize(ByteWriter& out) const {
    out.put<std::uint32_t>(static_cast<std::uint32_t>(config_.univ_layers));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(config_.cs_rows));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(config_.cs_cols_top));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(config_.cs_cols_bottom));
    out.put<double>(config_.hh_epsilon);
    out.put<std::uint64_t>(config_.seed);
    out.put<std::uint64_t>(n_total_);
    for (const auto& layer : layers_) layer.serialize(out);
    for (const auto& heap : heaps_) {
        out.put<std::uint8_t>(heap.lossless() ? 1 : 0);
        out.put<std::uint32_t>(static_cast<std::uint32_t>(heap.size()));
        for (const auto& e : heap.entries()) {
            out.put<std::uint64_t>(e.second);
            out.put<double>(e.first);
        }
    }
}

UnivSketch UnivSketch::deserialize(ByteReader& in) {
    SketchConfig c;
    c.univ_layers = static_cast<int>(in.get<std::uint32_t>());
    c.cs_rows = static_cast<int>(in.get<std::uint32_t>());
    c.cs_cols_top = static_cast<int>(in.get<std::uint32_t>());
    c.cs_cols_bottom = static_cast<int>(in.get<std::uint32_t>());
    c.hh_epsilon = in.get<double>();
    c.seed = in.get<std::uint64_t>();
    try {
        c.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::kCorruptData, std::string("bad universal sketch header: ") + e.what());
    }
    UnivSketch u(c);
    u.n_total_ = in.get<std::uint64_t>();
    for (auto& layer : u.layers_) layer.deserialize_counters(in);
    for (int j = 0; j < u.num_layers(); ++j) {
        const bool lossless = in.get<std::uint8_t>() != 0;
        auto count = in.get<std::uint32_t>();
        if (count > u.heaps_[j].capacity()) throw Error(ErrorCode::kCorruptData, "candidate set over capacity");
        for (std::uint32_t i = 0; i < count; ++i) {
            Token t = in.get<std::uint64_t>();
            u.heaps_[j].offer(t, in.get<double>());
        }
        u.heaps_[j].set_lossless(lossless);
    }
    return u;
}

std::size_t UnivSketch::base_serialized_size(const SketchConfig& config) {
    const int top_layers = (config.univ_layers + 1) / 2;
    std::size_t cols = static_cast<std::size_t>(top_layers) * config.cs_cols_top +
                       static_cast<std::size_t>(config.univ_layers - top_layers) * config.cs_cols_bottom;
    return 4 * 4 + 8 + 8 + 8 + cols * config.cs_rows * sizeof(std::int64_t) + 5 * config.univ_layers;
}

std::size_t UnivSketch::serialized_size() const noexcept {
    std::size_t candidates = 0;
    for (const auto& heap : heaps_) candidates += heap.size();
    return base_serialized_size(config_) + candidates * (sizeof(std::uint64_t) + sizeof(double));
}

std::size_t UnivSketch::memory_usage() const noexcept {
    std::size_t total = memory::of(layer_seeds_) + memory::of(layers_) + memory::of(heaps_);
    for (const auto& cs : layers_) total += cs.memory_usage();
    for (const auto& h : heaps_) total += h.memory_usage();
    return total;
}

}  // namespace promsketch
