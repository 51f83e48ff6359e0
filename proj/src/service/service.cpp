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

#include "promsketch/service.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "httplib.h"

namespace promsketch {

using nlohmann::json;

namespace {

std::shared_ptr<spdlog::logger> logger(const std::string& name) {
    if (auto l = spdlog::get(name)) return l;
    try {
        return spdlog::stderr_color_mt(name);
    } catch (const spdlog::spdlog_ex&) {
        // Another thread registered it between get() and creation.
        return spdlog::get(name);
    }
}

Error bad_request(const std::string& what) { return Error(ErrorCode::kParseError, what); }

json number_or_string(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "NaN";
    return v > 0 ? "+Inf" : "-Inf";
}

json value_json(const SampleValue& v) {
    if (const auto* d = std::get_if<double>(&v)) return number_or_string(*d);
    return std::get<std::string>(v);
}

int status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::kUnsupportedFunction:
            return 422;
        case ErrorCode::kUnknownRule:
            return 404;
        case ErrorCode::kParseError:
        case ErrorCode::kInvalidArgument:
        case ErrorCode::kDuplicateLabel:
        case ErrorCode::kTypeMismatch:
        case ErrorCode::kQueryOutsideWindow:
            return 400;
        default:
            return 500;
    }
}

Service::Response error_response(int status, std::string_view code, const std::string& message) {
    return {status, json{{"status", "error"}, {"error_code", code}, {"error", message}}.dump()};
}

Service::Response error_response(const Error& e) { return error_response(status_for(e.code()), to_string(e.code()), e.what()); }

Timestamp duration_field(const json& j, const char* name) {
    const auto& v = j.at(name);
    if (v.is_string()) return parse_duration(v.get<std::string>());
    if (v.is_number_integer()) return v.get<Timestamp>();
    throw bad_request(std::string(name) + " must be a duration string or integer milliseconds");
}

void set_int(const json& j, const char* key, int& out) {
    if (j.contains(key)) out = j.at(key).get<int>();
}

void apply_sketch_overrides(const json& j, SketchConfig& c) {
    static const std::set<std::string> known{"k_eh",          "k_kll",          "univ_layers", "cs_rows", "cs_cols_top",
                                              "cs_cols_bottom", "map_threshold_bytes", "hh_epsilon", "sample_prob", "seed"};
    for (const auto& [k, v] : j.items())
        if (!known.contains(k)) throw Error(ErrorCode::kInvalidArgument, "unknown sketch setting '" + k + "'");
    set_int(j, "k_eh", c.k_eh);
    set_int(j, "k_kll", c.k_kll);
    set_int(j, "univ_layers", c.univ_layers);
    set_int(j, "cs_rows", c.cs_rows);
    set_int(j, "cs_cols_top", c.cs_cols_top);
    set_int(j, "cs_cols_bottom", c.cs_cols_bottom);
    if (j.contains("map_threshold_bytes")) c.map_threshold_bytes = j.at("map_threshold_bytes").get<std::size_t>();
    if (j.contains("hh_epsilon")) c.hh_epsilon = j.at("hh_epsilon").get<double>();
    if (j.contains("sample_prob")) c.sample_prob = j.at("sample_prob").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
}

Timestamp wall_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace

void ServiceConfig::validate() const {
    host_port();
    if (!(cache.exact_slack >= 1.0)) throw Error(ErrorCode::kInvalidArgument, "exact_buffer_slack must be >= 1");
    cache.quantile.validate();
    cache.gsum.validate();
    cache.sample.validate();
}

std::pair<std::string, int> ServiceConfig::host_port() const {
    const auto colon = listen_addr.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == listen_addr.size())
        throw Error(ErrorCode::kInvalidArgument, "listen_addr must be host:port, got '" + listen_addr + "'");
    int port = -1;
    const char* begin = listen_addr.data() + colon + 1;
    const char* end = listen_addr.data() + listen_addr.size();
    auto [p, ec] = std::from_chars(begin, end, port);
    if (ec != std::errc{} || p != end || port < 0 || port > 65535)
        throw Error(ErrorCode::kInvalidArgument, "bad port in listen_addr '" + listen_addr + "'");
    return {listen_addr.substr(0, colon), port};
}

ServiceConfig load_service_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::kParseError, path + ": " + e.what());
    }
    static const std::set<std::string> known{"listen_addr", "rules_file", "exact_buffer_slack", "snapshot_path",
                                             "rule_clock",  "quantile",   "gsum",               "sample"};
    ServiceConfig c;
    try {
        for (const auto& [k, v] : j.items())
            if (!known.contains(k)) throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + k + "'");
        if (j.contains("listen_addr")) c.listen_addr = j.at("listen_addr").get<std::string>();
        if (j.contains("rules_file")) {
            // Relative rule paths resolve against the config file's directory.
            std::filesystem::path rules = j.at("rules_file").get<std::string>();
            if (rules.is_relative()) rules = std::filesystem::path(path).parent_path() / rules;
            c.rules_file = rules.string();
        }
        if (j.contains("exact_buffer_slack")) c.cache.exact_slack = j.at("exact_buffer_slack").get<double>();
        if (j.contains("snapshot_path")) c.snapshot_path = j.at("snapshot_path").get<std::string>();
        if (j.contains("rule_clock")) {
            const auto clock = j.at("rule_clock").get<std::string>();
            if (clock == "wall")
                c.rule_clock = RuleClock::kWall;
            else if (clock == "newest_sample")
                c.rule_clock = RuleClock::kNewestSample;
            else
                throw Error(ErrorCode::kInvalidArgument, "rule_clock must be 'wall' or 'newest_sample'");
        }
        if (j.contains("quantile")) apply_sketch_overrides(j.at("quantile"), c.cache.quantile);
        if (j.contains("gsum")) apply_sketch_overrides(j.at("gsum"), c.cache.gsum);
        if (j.contains("sample")) apply_sketch_overrides(j.at("sample"), c.cache.sample);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::kInvalidArgument, path + ": " + e.what());
    }
    c.validate();
    return c;
}

void apply_env_overrides(ServiceConfig& config) {
    if (const char* addr = std::getenv("PROMSKETCH_LISTEN_ADDR"); addr && *addr) config.listen_addr = addr;
    if (const char* seed = std::getenv("PROMSKETCH_SEED"); seed && *seed) {
        std::uint64_t v = 0;
        const char* end = seed + std::strlen(seed);
        auto [p, ec] = std::from_chars(seed, end, v);
        if (ec != std::errc{} || p != end) throw Error(ErrorCode::kInvalidArgument, "PROMSKETCH_SEED must be an integer");
        config.cache.quantile.seed = config.cache.gsum.seed = config.cache.sample.seed = v;
    }
}

RuleSpec rule_from_json(const json& j) {
    if (!j.is_object()) throw bad_request("rule must be a JSON object");
    try {
        RuleSpec r;
        r.rule_id = j.contains("id") ? j.at("id").get<std::string>() : j.at("rule_id").get<std::string>();
        r.kind = parse_rule_kind(j.value("type", std::string("record")));
        r.eval_interval_ms = duration_field(j, "evaluation_interval");
        r.expr = j.at("expr").get<std::string>();
        if (j.contains("condition") && !j.at("condition").is_null()) {
            const auto& c = j.at("condition");
            AlertCondition cond;
            if (c.is_string()) {
                // "> 6.5" shorthand
                const auto text = c.get<std::string>();
                const auto split = text.find_first_not_of("<>=!");
                if (split == 0 || split == std::string::npos) throw bad_request("condition must look like '> 6.5'");
                auto op = text.substr(0, split);
                cond.op = parse_compare_op(op);
                auto rest = text.substr(split);
                rest.erase(0, rest.find_first_not_of(' '));
                auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), cond.threshold);
                if (ec != std::errc{} || p != rest.data() + rest.size()) throw bad_request("bad condition threshold");
            } else {
                cond.op = parse_compare_op(c.at("op").get<std::string>());
                cond.threshold = c.at("threshold").get<double>();
            }
            r.condition = cond;
        }
        return r;
    } catch (const json::exception& e) {
        throw bad_request(std::string("malformed rule: ") + e.what());
    }
}

json rule_to_json(const RuleSpec& r) {
    json j{{"id", r.rule_id},
           {"type", to_string(r.kind)},
           {"evaluation_interval", format_duration(r.eval_interval_ms)},
           {"expr", r.expr}};
    if (r.condition) j["condition"] = {{"op", to_string(r.condition->op)}, {"threshold", r.condition->threshold}};
    return j;
}

std::vector<RuleSpec> rules_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open rules file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::kParseError, path + ": " + e.what());
    }
    if (j.is_object() && j.contains("rules")) j = j.at("rules");
    if (!j.is_array()) throw Error(ErrorCode::kParseError, path + ": expected an array of rules");
    std::vector<RuleSpec> out;
    for (const auto& r : j) out.push_back(rule_from_json(r));
    return out;
}

DataSample sample_from_json(const json& j) {
    if (!j.is_object()) throw bad_request("sample must be a JSON object");
    if (!j.contains("metric") || !j.at("metric").is_string()) throw bad_request("sample needs a string 'metric'");
    std::vector<Label> labels;
    if (j.contains("labels")) {
        if (!j.at("labels").is_object()) throw bad_request("'labels' must be an object");
        for (const auto& [k, v] : j.at("labels").items()) {
            if (!v.is_string()) throw bad_request("label values must be strings");
            labels.push_back({k, v.get<std::string>()});
        }
    }
    if (!j.contains("timestamp_ms") || !j.at("timestamp_ms").is_number_integer())
        throw bad_request("sample needs an integer 'timestamp_ms'");
    if (!j.contains("value")) throw bad_request("sample needs a 'value'");
    DataSample s;
    s.series = canonicalize(j.at("metric").get<std::string>(), std::move(labels));
    s.timestamp = j.at("timestamp_ms").get<Timestamp>();
    if (s.timestamp < 0) throw bad_request("timestamp_ms must be >= 0");
    const auto& v = j.at("value");
    if (v.is_number())
        s.value = v.get<double>();
    else if (v.is_string())
        s.value = v.get<std::string>();
    else
        throw bad_request("value must be a number or a string");
    return s;
}

json result_to_json(const QueryResult& r) {
    json series = json::array();
    std::optional<ErrorAnnotation> widest;
    for (const auto& s : r.series) {
        json e{{"metric", s.series.metric_name}, {"labels", json::object()}, {"source", to_string(s.source)}};
        for (const auto& [k, v] : s.series.labels) e["labels"][k] = v;
        if (s.source == ResultSource::kExact) e["cache_miss"] = to_string(s.miss);
        if (s.value) {
            if (const auto* d = std::get_if<double>(&*s.value)) {
                e["value"] = number_or_string(*d);
            } else {
                json top = json::array();
                const auto& interner = TokenInterner::global();
                for (const auto& [token, weight] : std::get<TopkList>(*s.value))
                    top.push_back({{"value", value_json(interner.value_of(token))}, {"weight", weight}});
                e["topk"] = std::move(top);
            }
        }
        if (s.annotation) {
            e["error_annotation"] = {{"bound_kind", s.annotation->bound_kind}, {"epsilon", s.annotation->epsilon}};
            if (!widest || s.annotation->epsilon > widest->epsilon) widest = s.annotation;
        }
        if (s.error_code) e["error"] = {{"code", to_string(*s.error_code)}, {"message", s.error}};
        series.push_back(std::move(e));
    }
    json out{{"expr", unparse(r.expr)},
             {"window", {{"start_ms", r.window.start}, {"end_ms", r.window.end}}},
             {"source", to_string(r.source)},
             {"series", std::move(series)}};
    out["error_annotation"] = widest ? json{{"bound_kind", widest->bound_kind}, {"epsilon", widest->epsilon}} : json();
    return out;
}

Service::Service(ServiceConfig config)
    : config_((config.validate(), std::move(config))), cache_(config_.cache), engine_(cache_), exact_engine_(cache_, false) {
    if (!config_.rules_file.empty()) {
        for (const auto& spec : rules_from_file(config_.rules_file)) {
            const auto r = register_spec(spec);
            if (r.status != 200) logger("promsketch")->warn("rule {} not cached: {}", spec.rule_id, r.body);
        }
    }
    if (config_.snapshot_path && std::filesystem::exists(*config_.snapshot_path)) {
        const auto n = cache_.load_snapshot(*config_.snapshot_path);
        logger("promsketch")->info("restored {} cache instances from {}", n, *config_.snapshot_path);
        for (const auto& inst : cache_.instances()) {
            const auto last = inst->read([](const CacheInstance::View& v) { return v.has_data ? v.last_ts : 0; });
            if (last > newest_sample_.load()) newest_sample_ = last;
        }
    }
}

Service::~Service() { stop(); }

Service::Response Service::ingest(const std::string& body) {
    std::vector<DataSample> batch;
    try {
        const auto j = json::parse(body);
        if (!j.is_array()) return error_response(400, "parse_error", "ingest body must be a JSON array");
        batch.reserve(j.size());
        for (const auto& s : j) batch.push_back(sample_from_json(s));
    } catch (const json::exception& e) {
        return error_response(400, "parse_error", e.what());
    } catch (const Error& e) {
        return error_response(400, to_string(e.code()), e.what());
    }
    const auto statuses = cache_.ingest_parallel(batch);
    json out{{"statuses", json::array()}, {"accepted", 0}};
    std::size_t accepted = 0;
    Timestamp newest = newest_sample_.load();
    for (std::size_t i = 0; i < statuses.size(); ++i) {
        out["statuses"].push_back(to_string(statuses[i]));
        if (statuses[i] == IngestStatus::kAccepted) {
            ++accepted;
            newest = std::max(newest, batch[i].timestamp);
        }
    }
    // Monotone max under concurrent ingest requests.
    for (Timestamp cur = newest_sample_.load(); newest > cur && !newest_sample_.compare_exchange_weak(cur, newest);) {
    }
    out["accepted"] = accepted;
    return {200, out.dump()};
}

Service::Response Service::query(const std::string& expr, const std::optional<std::string>& time, bool use_cache) {
    try {
        const auto q = parse_query(expr);
        Timestamp at = rule_time();
        if (time) {
            auto [p, ec] = std::from_chars(time->data(), time->data() + time->size(), at);
            if (ec != std::errc{} || p != time->data() + time->size())
                return error_response(400, "invalid_argument", "time must be integer milliseconds");
        }
        const auto& engine = use_cache ? engine_ : exact_engine_;
        json out{{"status", "success"}, {"data", result_to_json(engine.evaluate(q, at))}};
        return {200, out.dump()};
    } catch (const Error& e) {
        return error_response(e);
    }
}

Service::Response Service::register_spec(const RuleSpec& spec) {
    if (spec.kind == RuleKind::kAlert && !spec.condition)
        return error_response(400, "invalid_argument", "alert rules need a condition");
    SketchCache::Registration reg;
    try {
        reg = cache_.register_rule(spec);
    } catch (const Error& e) {
        return error_response(e);
    }
    if (!reg.supported) return error_response(422, "unsupported_function", reg.notice);
    {
        std::lock_guard lock(rules_mu_);
        auto& s = scheduled_[spec.rule_id];
        if (!(s.spec == spec)) {
            s = Scheduled{};
            s.spec = spec;
            s.next = std::chrono::steady_clock::now() + std::chrono::milliseconds(spec.eval_interval_ms);
        }
    }
    sched_cv_.notify_all();
    json out{{"status", "success"}, {"rule", rule_to_json(spec)}, {"instances", reg.instances.size()}};
    if (!reg.notice.empty()) out["notice"] = reg.notice;
    return {200, out.dump()};
}

Service::Response Service::add_rule(const std::string& body) {
    try {
        return register_spec(rule_from_json(json::parse(body)));
    } catch (const json::exception& e) {
        return error_response(400, "parse_error", e.what());
    } catch (const Error& e) {
        return error_response(e);
    }
}

Service::Response Service::delete_rule(const std::string& id) {
    try {
        const auto removed = cache_.unregister_rule(id);
        {
            std::lock_guard lock(rules_mu_);
            scheduled_.erase(id);
        }
        return {200, json{{"status", "success"}, {"removed_instances", removed}}.dump()};
    } catch (const Error& e) {
        return error_response(e);
    }
}

Service::Response Service::stats() const {
    json instances = json::array();
    for (const auto& inst : cache_.instances()) {
        json rules = json::array();
        for (const auto& r : inst->ref_rules()) rules.push_back(r);
        instances.push_back({{"series", inst->series().to_string()},
                             {"family", to_string(inst->family())},
                             {"buckets", inst->bucket_count()},
                             {"memory_bytes", inst->memory_bytes()},
                             {"max_window_ms", inst->max_window()},
                             {"accepted", inst->accepted()},
                             {"rejected", inst->rejected()},
                             {"rules", std::move(rules)}});
    }
    std::size_t rule_count = 0;
    {
        std::lock_guard lock(rules_mu_);
        rule_count = scheduled_.size();
    }
    json out{{"memory_bytes", cache_.memory_bytes()},
             {"serialized_bytes", cache_.serialized_bytes()},
             {"instance_count", instances.size()},
             {"rule_count", rule_count},
             {"hits", engine_.hits()},
             {"misses", engine_.misses()},
             {"exact_samples", cache_.store().sample_count()},
             {"instances", std::move(instances)}};
    return {200, out.dump()};
}

Timestamp Service::rule_time() const {
    return config_.rule_clock == RuleClock::kWall ? wall_ms() : newest_sample_.load();
}

void Service::evaluate_rule(Scheduled& rule) {
    QueryResult r;
    try {
        r = engine_.evaluate(parse_query(rule.spec.expr), rule_time());
    } catch (const Error& e) {
        logger("promsketch")->warn("rule {} failed: {}", rule.spec.rule_id, e.what());
        return;
    }
    if (rule.spec.kind == RuleKind::kAlert) {
        for (const auto& s : r.series) {
            const auto* v = s.value ? std::get_if<double>(&*s.value) : nullptr;
            if (!v) continue;
            const bool firing = rule.spec.condition->holds(*v);
            auto& state = rule.active[s.series.canonical_id];
            if (firing == state) continue;
            state = firing;
            alerts_.push_back({rule.spec.rule_id, s.series, r.window.end, *v, firing});
            if (alerts_.size() > config_.alert_history) alerts_.pop_front();
            logger("alerts")->info("{} rule={} series={} value={} at={} source={}", firing ? "FIRING" : "RESOLVED",
                                   rule.spec.rule_id, s.series.to_string(), *v, r.window.end, to_string(s.source));
        }
    }
    rule.last = std::move(r);
}

std::size_t Service::run_due_rules(std::chrono::steady_clock::time_point now) {
    std::lock_guard lock(rules_mu_);
    std::size_t ran = 0;
    for (auto& [id, rule] : scheduled_) {
        if (rule.next > now) continue;
        evaluate_rule(rule);
        rule.fired.push_back(now);
        if (rule.fired.size() > 1024) rule.fired.erase(rule.fired.begin());
        const auto interval = std::chrono::milliseconds(rule.spec.eval_interval_ms);
        rule.next += interval;
        // A slow evaluation skips missed ticks instead of bursting.
        if (rule.next <= now) rule.next = now + interval;
        ++ran;
    }
    return ran;
}

std::vector<std::chrono::steady_clock::time_point> Service::fire_times(const std::string& rule_id) const {
    std::lock_guard lock(rules_mu_);
    auto it = scheduled_.find(rule_id);
    return it == scheduled_.end() ? std::vector<std::chrono::steady_clock::time_point>{} : it->second.fired;
}

std::vector<AlertEvent> Service::alerts() const {
    std::lock_guard lock(rules_mu_);
    return {alerts_.begin(), alerts_.end()};
}

void Service::start_scheduler() {
    if (scheduler_.joinable()) return;
    {
        std::lock_guard lock(sched_mu_);
        sched_stop_ = false;
    }
    scheduler_ = std::thread([this] {
        std::unique_lock lock(sched_mu_);
        while (!sched_stop_) {
            lock.unlock();
            run_due_rules(std::chrono::steady_clock::now());
            auto wake = std::chrono::steady_clock::now() + std::chrono::seconds(1);
            {
                std::lock_guard rl(rules_mu_);
                for (const auto& [id, r] : scheduled_) wake = std::min(wake, r.next);
            }
            lock.lock();
            sched_cv_.wait_until(lock, wake, [this] { return sched_stop_; });
        }
    });
}

void Service::stop_scheduler() {
    {
        std::lock_guard lock(sched_mu_);
        sched_stop_ = true;
    }
    sched_cv_.notify_all();
    if (scheduler_.joinable()) scheduler_.join();
}

void Service::install_routes() {
    server_ = std::make_unique<httplib::Server>();
    auto reply = [](httplib::Response& res, const Response& r) { res.status = r.status, res.set_content(r.body, "application/json"); };
    server_->Post("/api/v1/ingest", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, ingest(req.body));
    });
    server_->Get("/api/v1/query", [this, reply](const httplib::Request& req, httplib::Response& res) {
        if (!req.has_param("query")) return reply(res, error_response(400, "invalid_argument", "missing 'query' parameter"));
        std::optional<std::string> time;
        if (req.has_param("time")) time = req.get_param_value("time");
        bool use_cache = true;
        if (req.has_param("cache")) {
            const auto v = req.get_param_value("cache");
            if (v != "true" && v != "false") return reply(res, error_response(400, "invalid_argument", "cache must be true or false"));
            use_cache = v == "true";
        }
        reply(res, query(req.get_param_value("query"), time, use_cache));
    });
    server_->Get("/api/v1/rules", [this, reply](const httplib::Request&, httplib::Response& res) {
        json rules = json::array();
        for (const auto& r : cache_.rules()) rules.push_back(rule_to_json(r));
        reply(res, {200, json{{"rules", std::move(rules)}}.dump()});
    });
    server_->Post("/api/v1/rules", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, add_rule(req.body));
    });
    server_->Delete(R"(/api/v1/rules/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, delete_rule(req.matches[1]));
    });
    server_->Get("/api/v1/stats", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, stats()); });
}

int Service::start() {
    std::lock_guard lock(lifecycle_mu_);
    if (server_) throw Error(ErrorCode::kInvalidArgument, "service already started");
    const auto [host, port] = config_.host_port();
    install_routes();
    const int bound = port == 0 ? server_->bind_to_any_port(host) : server_->bind_to_port(host, port) ? port : -1;
    if (bound < 0) {
        server_.reset();
        throw Error(ErrorCode::kInvalidArgument, "cannot bind " + config_.listen_addr);
    }
    stopped_ = false;
    start_scheduler();
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    logger("promsketch")->info("listening on {}:{}", host, bound);
    return bound;
}

void Service::stop() {
    std::lock_guard lock(lifecycle_mu_);
    if (stopped_) return;
    stopped_ = true;
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
    stop_scheduler();
    save_snapshot();
}

void Service::save_snapshot() const {
    if (!config_.snapshot_path) return;
    try {
        cache_.save_snapshot(*config_.snapshot_path);
    } catch (const Error& e) {
        logger("promsketch")->error("snapshot failed: {}", e.what());
    }
}

}  // namespace promsketch
