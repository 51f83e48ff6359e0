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

#ifndef PROMSKETCH_SERVICE_HPP
#define PROMSKETCH_SERVICE_HPP

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "json.hpp"

#include "promsketch/cache.hpp"
#include "promsketch/engine.hpp"

namespace httplib {
class Server;
}

namespace promsketch {

/// Which timestamp the scheduler evaluates rules at.
enum class RuleClock { kWall, kNewestSample };

struct ServiceConfig {
    std::string listen_addr = "127.0.0.1:9090";
    std::string rules_file;
    CacheConfig cache;
    std::optional<std::string> snapshot_path;
    RuleClock rule_clock = RuleClock::kWall;
    std::size_t alert_history = 1000;

    /// Throws InvalidArgument for an unparseable listen address or slack < 1.
    void validate() const;
    std::pair<std::string, int> host_port() const;
};

/// JSON config: {listen_addr, rules_file, exact_buffer_slack, snapshot_path, rule_clock,
/// quantile: {k_eh, k_kll}, gsum: {k_eh, ...}, sample: {sample_prob, seed}}. Unknown keys are errors.
ServiceConfig load_service_config(const std::string& path);
/// Applies PROMSKETCH_LISTEN_ADDR and PROMSKETCH_SEED when set.
void apply_env_overrides(ServiceConfig& config);

// Wire format.
RuleSpec rule_from_json(const nlohmann::json& j);
nlohmann::json rule_to_json(const RuleSpec& r);
std::vector<RuleSpec> rules_from_file(const std::string& path);
nlohmann::json result_to_json(const QueryResult& r);
/// Throws ParseError for a malformed sample.
DataSample sample_from_json(const nlohmann::json& j);

struct AlertEvent {
    std::string rule_id;
    SeriesId series;
    Timestamp at = 0;
    double value = 0.0;
    bool firing = false;  // false marks the transition back to inactive
};

/// HTTP-free core of the service: handlers map request data to (status, JSON body), so they can
/// be exercised directly. serve() wires them to an HTTP server and starts the rule scheduler.
class Service {
  public:
    explicit Service(ServiceConfig config);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    struct Response {
        int status = 200;
        std::string body;
    };

    Response ingest(const std::string& body);
    /// use_cache = false forces the exact path (the `cache=false` query parameter).
    Response query(const std::string& expr, const std::optional<std::string>& time, bool use_cache = true);
    Response add_rule(const std::string& body);
    Response delete_rule(const std::string& id);
    Response stats() const;

    /// Evaluates every rule whose next deadline is at or before `now`; returns how many ran.
    std::size_t run_due_rules(std::chrono::steady_clock::time_point now);
    /// Wall-clock (steady) times each rule fired, for schedule checks.
    std::vector<std::chrono::steady_clock::time_point> fire_times(const std::string& rule_id) const;
    std::vector<AlertEvent> alerts() const;

    void start_scheduler();
    void stop_scheduler();

    /// Binds the listen address (port 0 picks a free port), serves in a background thread and
    /// starts the scheduler. Returns the bound port; throws InvalidArgument if binding fails.
    int start();
    /// Stops serving and scheduling, then writes the snapshot if configured. Idempotent.
    void stop();

    SketchCache& cache() noexcept { return cache_; }
    const ServiceConfig& config() const noexcept { return config_; }

  private:
    struct Scheduled {
        RuleSpec spec;
        std::chrono::steady_clock::time_point next;
        std::vector<std::chrono::steady_clock::time_point> fired;
        std::map<std::uint64_t, bool> active;  // alert state per series
        std::optional<QueryResult> last;
    };

    Response register_spec(const RuleSpec& spec);
    void evaluate_rule(Scheduled& rule);
    Timestamp rule_time() const;
    void install_routes();
    void save_snapshot() const;

    ServiceConfig config_;
    SketchCache cache_;
    QueryEngine engine_;
    QueryEngine exact_engine_;
    std::atomic<Timestamp> newest_sample_{0};

    mutable std::mutex rules_mu_;
    std::map<std::string, Scheduled> scheduled_;
    std::deque<AlertEvent> alerts_;

    std::mutex sched_mu_;
    std::condition_variable sched_cv_;
    bool sched_stop_ = false;
    std::thread scheduler_;

    std::mutex lifecycle_mu_;
    bool stopped_ = false;
    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
};

}  // namespace promsketch

#endif  // PROMSKETCH_SERVICE_HPP
