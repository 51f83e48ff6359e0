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

#include "promsketch/query.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "promsketch/kll.hpp"

namespace promsketch {

namespace {

struct FunctionName {
    std::string_view name;
    QueryFunction func;
};

constexpr std::array<FunctionName, 12> kFunctions{{
    {"quantile_over_time", QueryFunction::kQuantile},
    {"min_over_time", QueryFunction::kMin},
    {"max_over_time", QueryFunction::kMax},
    {"count_over_time", QueryFunction::kCount},
    {"sum_over_time", QueryFunction::kSum},
    {"avg_over_time", QueryFunction::kAvg},
    {"stddev_over_time", QueryFunction::kStddev},
    {"stdvar_over_time", QueryFunction::kStdvar},
    {"entropy_over_time", QueryFunction::kEntropy},
    {"distinct_over_time", QueryFunction::kDistinct},
    {"l2_over_time", QueryFunction::kL2},
    {"topk_over_time", QueryFunction::kTopk},
}};

bool is_name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == ':'; }
bool is_name_char(char c) { return is_name_start(c) || std::isdigit(static_cast<unsigned char>(c)); }

class Parser {
  public:
    explicit Parser(std::string_view text) : s_(text) {}

    QueryExpr parse() {
        QueryExpr e;
        skip_ws();
        const std::size_t fpos = pos_;
        const std::string fname = name();
        e.func = function(fname, fpos);
        expect('(');
        skip_ws();
        if (takes_argument(e.func)) {
            const std::size_t apos = pos_;
            e.arg = number();
            check_arg(e.func, *e.arg, apos);
            expect(',');
        }
        e.selector = selector();
        expect('[');
        skip_ws();
        const std::size_t rpos = pos_;
        e.range_ms = duration();
        if (e.range_ms <= 0) throw ParseError(rpos, "range must be positive");
        expect(']');
        skip_ws();
        if (s_.substr(pos_).starts_with("offset") && pos_ + 6 < s_.size() && !is_name_char(s_[pos_ + 6])) {
            pos_ += 6;
            skip_ws();
            e.offset_ms = duration();
        }
        expect(')');
        skip_ws();
        if (pos_ != s_.size()) throw ParseError(pos_, "trailing input");
        return e;
    }

    Timestamp duration() {
        const std::size_t start = pos_;
        std::int64_t v = 0;
        auto [ptr, ec] = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), v);
        if (ec != std::errc() || ptr == s_.data() + pos_) throw ParseError(start, "expected duration");
        pos_ = static_cast<std::size_t>(ptr - s_.data());
        std::int64_t unit = 0;
        if (s_.substr(pos_).starts_with("ms")) {
            unit = 1;
            pos_ += 2;
        } else if (pos_ < s_.size()) {
            switch (s_[pos_]) {
                case 's':
                    unit = 1000;
                    break;
                case 'm':
                    unit = 60'000;
                    break;
                case 'h':
                    unit = 3'600'000;
                    break;
                case 'd':
                    unit = 86'400'000;
                    break;
                default:
                    break;
            }
            if (unit) ++pos_;
        }
        if (!unit) throw ParseError(pos_, "expected duration unit (ms, s, m, h, d)");
        if (pos_ < s_.size() && is_name_char(s_[pos_])) throw ParseError(pos_, "unexpected character after duration");
        if (v < 0 || v > std::numeric_limits<std::int64_t>::max() / unit) throw ParseError(start, "duration out of range");
        return v * unit;
    }

    bool at_end() const { return pos_ == s_.size(); }

  private:
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    void expect(char c) {
        skip_ws();
        if (pos_ >= s_.size() || s_[pos_] != c) throw ParseError(pos_, std::string("expected '") + c + "'");
        ++pos_;
    }

    std::string name() {
        if (pos_ >= s_.size() || !is_name_start(s_[pos_])) throw ParseError(pos_, "expected identifier");
        const std::size_t start = pos_;
        while (pos_ < s_.size() && is_name_char(s_[pos_])) ++pos_;
        return std::string(s_.substr(start, pos_ - start));
    }

    static QueryFunction function(const std::string& fname, std::size_t pos) {
        for (const auto& f : kFunctions)
            if (f.name == fname) return f.func;
        if (fname.ends_with("_over_time")) throw Error(ErrorCode::kUnsupportedFunction, "unsupported function " + fname);
        throw ParseError(pos, "unknown function '" + fname + "'");
    }

    double number() {
        const std::size_t start = pos_;
        double v = 0;
        auto [ptr, ec] = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), v);
        if (ec != std::errc() || ptr == s_.data() + pos_) throw ParseError(start, "expected number");
        pos_ = static_cast<std::size_t>(ptr - s_.data());
        return v;
    }

    static void check_arg(QueryFunction f, double v, std::size_t pos) {
        if (f == QueryFunction::kQuantile && !(v >= 0.0 && v <= 1.0)) throw ParseError(pos, "quantile must lie in [0, 1]");
        if (f == QueryFunction::kTopk && !(v >= 1.0 && v == std::floor(v) && v <= 1e6))
            throw ParseError(pos, "k must be a positive integer");
    }

    std::string quoted() {
        skip_ws();
        if (pos_ >= s_.size() || s_[pos_] != '"') throw ParseError(pos_, "expected '\"'");
        ++pos_;
        std::string out;
        while (true) {
            if (pos_ >= s_.size()) throw ParseError(pos_, "unterminated string");
            const char c = s_[pos_++];
            if (c == '"') return out;
            if (c != '\\') {
                out.push_back(c);
                continue;
            }
            if (pos_ >= s_.size()) throw ParseError(pos_, "unterminated escape");
            const char x = s_[pos_++];
            switch (x) {
                case 'n':
                    out.push_back('\n');
                    break;
                case 't':
                    out.push_back('\t');
                    break;
                case '"':
                case '\\':
                    out.push_back(x);
                    break;
                default:
                    throw ParseError(pos_ - 1, "unknown escape");
            }
        }
    }

    Selector selector() {
        Selector sel;
        skip_ws();
        sel.metric = name();
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == '{') {
            ++pos_;
            skip_ws();
            if (pos_ < s_.size() && s_[pos_] == '}') throw ParseError(pos_, "empty matcher list");
            while (true) {
                skip_ws();
                const std::size_t npos = pos_;
                std::string label = name();
                if (label.find(':') != std::string::npos) throw ParseError(npos, "label names may not contain ':'");
                expect('=');
                std::string value = quoted();
                for (const auto& [n, v] : sel.matchers)
                    if (n == label) throw ParseError(npos, "duplicate matcher '" + label + "'");
                sel.matchers.emplace_back(std::move(label), std::move(value));
                skip_ws();
                if (pos_ < s_.size() && s_[pos_] == ',') {
                    ++pos_;
                    continue;
                }
                expect('}');
                break;
            }
        }
        std::sort(sel.matchers.begin(), sel.matchers.end());
        return sel;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

std::string quote(const std::string& v) {
    std::string out = "\"";
    for (char c : v) {
        switch (c) {
            case '"':
                out += "\\\"";
                break;
            case '\\':
                out += "\\\\";
                break;
            case '\n':
                out += "\\n";
                break;
            case '\t':
                out += "\\t";
                break;
            default:
                out.push_back(c);
        }
    }
    return out + "\"";
}

std::vector<double> numeric_values(std::span<const StoredSample> samples) {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        const auto* d = std::get_if<double>(&s.value);
        if (!d) throw Error(ErrorCode::kTypeMismatch, "numeric function over string samples");
        out.push_back(*d);
    }
    return out;
}

/// Token frequencies in ascending token order.
std::vector<std::pair<Token, std::uint64_t>> token_counts(std::span<const StoredSample> samples) {
    std::unordered_map<Token, std::uint64_t> counts;
    auto& interner = TokenInterner::global();
    for (const auto& s : samples) ++counts[interner.token_for(s.value)];
    std::vector<std::pair<Token, std::uint64_t>> out(counts.begin(), counts.end());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::string_view to_string(QueryFunction f) {
    for (const auto& entry : kFunctions)
        if (entry.func == f) return entry.name;
    return "?";
}

std::string_view to_string(Family f) {
    switch (f) {
        case Family::kQuantile:
            return "quantile";
        case Family::kGsum:
            return "gsum";
        case Family::kSample:
            return "sample";
    }
    return "?";
}

Family family_of(QueryFunction f) {
    switch (f) {
        case QueryFunction::kQuantile:
        case QueryFunction::kMin:
        case QueryFunction::kMax:
            return Family::kQuantile;
        case QueryFunction::kEntropy:
        case QueryFunction::kDistinct:
        case QueryFunction::kL2:
        case QueryFunction::kTopk:
            return Family::kGsum;
        default:
            return Family::kSample;
    }
}

bool takes_argument(QueryFunction f) { return f == QueryFunction::kQuantile || f == QueryFunction::kTopk; }

bool Selector::matches(const SeriesId& series) const {
    if (series.metric_name != metric) return false;
    for (const auto& m : matchers)
        if (!std::binary_search(series.labels.begin(), series.labels.end(), m)) return false;
    return true;
}

QueryExpr parse_query(std::string_view text) { return Parser(text).parse(); }

Timestamp parse_duration(std::string_view text) {
    Parser p(text);
    const auto d = p.duration();
    if (!p.at_end()) throw ParseError(text.size(), "trailing input after duration");
    return d;
}

std::string format_duration(Timestamp ms) {
    constexpr std::array<std::pair<Timestamp, const char*>, 4> units{
        {{86'400'000, "d"}, {3'600'000, "h"}, {60'000, "m"}, {1000, "s"}}};
    if (ms != 0)
        for (const auto& [size, suffix] : units)
            if (ms % size == 0) return std::to_string(ms / size) + suffix;
    return std::to_string(ms) + "ms";
}

std::string unparse(const QueryExpr& e) {
    std::string out(to_string(e.func));
    out += '(';
    if (e.arg) {
        std::array<char, 32> buf{};
        auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), *e.arg);
        out.append(buf.data(), ptr);
        out += ", ";
    }
    out += e.selector.metric;
    if (!e.selector.matchers.empty()) {
        out += '{';
        for (std::size_t i = 0; i < e.selector.matchers.size(); ++i) {
            if (i) out += ',';
            out += e.selector.matchers[i].first + "=" + quote(e.selector.matchers[i].second);
        }
        out += '}';
    }
    out += '[' + format_duration(e.range_ms) + ']';
    if (e.offset_ms) out += " offset " + format_duration(e.offset_ms);
    out += ')';
    return out;
}

QueryValue exact_eval(QueryFunction func, std::span<const StoredSample> samples, std::optional<double> arg) {
    if (func == QueryFunction::kCount) return static_cast<double>(samples.size());
    if (samples.empty()) throw Error(ErrorCode::kEmptyRange, "no samples in range");
    switch (func) {
        case QueryFunction::kQuantile:
        case QueryFunction::kMin:
        case QueryFunction::kMax: {
            auto v = numeric_values(samples);
            const double phi = func == QueryFunction::kMin ? 0.0 : func == QueryFunction::kMax ? 1.0 : arg.value_or(0.5);
            const auto rank = quantile_target_rank(phi, v.size());
            auto nth = v.begin() + static_cast<std::ptrdiff_t>(rank - 1);
            std::nth_element(v.begin(), nth, v.end());
            return *nth;
        }
        case QueryFunction::kSum:
        case QueryFunction::kAvg:
        case QueryFunction::kStddev:
        case QueryFunction::kStdvar: {
            const auto v = numeric_values(samples);
            double total = 0.0;
            for (double x : v) total += x;
            if (func == QueryFunction::kSum) return total;
            const double mean = total / static_cast<double>(v.size());
            if (func == QueryFunction::kAvg) return mean;
            if (v.size() < 2) throw Error(ErrorCode::kInsufficientSamples, "variance needs two samples");
            double ss = 0.0;
            for (double x : v) ss += (x - mean) * (x - mean);
            const double var = ss / static_cast<double>(v.size() - 1);
            return func == QueryFunction::kStdvar ? var : std::sqrt(var);
        }
        case QueryFunction::kDistinct:
            return static_cast<double>(token_counts(samples).size());
        case QueryFunction::kL2: {
            double acc = 0.0;
            for (const auto& [t, f] : token_counts(samples)) acc += static_cast<double>(f) * static_cast<double>(f);
            return std::sqrt(acc);
        }
        case QueryFunction::kEntropy: {
            const double n = static_cast<double>(samples.size());
            double acc = 0.0;
            for (const auto& [t, f] : token_counts(samples)) acc += static_cast<double>(f) * std::log2(static_cast<double>(f));
            return std::max(0.0, std::log2(n) - acc / n);
        }
        case QueryFunction::kTopk: {
            auto counts = token_counts(samples);
            const auto k = static_cast<std::size_t>(arg.value_or(10));
            // Ties go to the smaller token; counts is already token-ordered.
            std::stable_sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
            TopkList out;
            for (std::size_t i = 0; i < std::min(k, counts.size()); ++i)
                out.emplace_back(counts[i].first, static_cast<double>(counts[i].second));
            return out;
        }
        default:
            break;
    }
    throw Error(ErrorCode::kUnsupportedFunction, "unsupported function");
}

}  // namespace promsketch
