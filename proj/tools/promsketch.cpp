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

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "promsketch/bench.hpp"
#include "promsketch/service.hpp"

using namespace promsketch;

namespace {

int run_serve(const std::string& config_path) {
    ServiceConfig config = config_path.empty() ? ServiceConfig{} : load_service_config(config_path);
    apply_env_overrides(config);
    config.validate();

    // Block the shutdown signals before any thread starts so only sigwait sees them.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    Service service(std::move(config));
    service.start();
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
    return 0;
}

int run_bench(bench::Options options, const std::string& algo, const std::string& out_path) {
    options.algos = bench::parse_algos(algo);
    if (const char* seed = std::getenv("PROMSKETCH_SEED"); seed && *seed) options.seed = std::stoull(seed);
    const auto report = bench::run(options);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write " + out_path);
        bench::write_csv(out, report);
    }
    bench::write_summary(std::cout, report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sketch cache for sliding-window time-series queries"};
    app.require_subcommand(1);

    std::string config_path;
    auto* serve = app.add_subcommand("serve", "Run the HTTP service and rule scheduler");
    serve->add_option("--config", config_path, "JSON service config");

    bench::Options options;
    std::string algo = "all", out_path;
    std::optional<int> k_eh, k_kll;
    std::optional<double> sample_prob;
    auto* bench_cmd = app.add_subcommand("bench", "Accuracy and throughput on a generated or recorded stream");
    bench_cmd->add_option("--dataset", options.dataset, "zipf | uniform | dynamic | file")
        ->check(CLI::IsMember({"zipf", "uniform", "dynamic", "file"}));
    bench_cmd->add_option("--file", options.file, "CSV with header ts_ms,value (dataset=file)");
    bench_cmd->add_option("--n", options.n, "stream length")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--window", options.window, "window length in samples")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--algo", algo, "ehkll | ehuniv | sampler | all")
        ->check(CLI::IsMember({"ehkll", "ehuniv", "sampler", "all"}));
    bench_cmd->add_option("--seed", options.seed, "generator seed (env PROMSKETCH_SEED overrides)");
    bench_cmd->add_option("--out", out_path, "CSV report path");
    bench_cmd->add_option("--k-eh", k_eh, "EH parameter for the chosen algorithms");
    bench_cmd->add_option("--k-kll", k_kll, "KLL parameter");
    bench_cmd->add_option("--sample-prob", sample_prob, "sampling probability");
    bench_cmd->add_option("--topk", options.topk, "k for top-k recall");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*serve) return run_serve(config_path);
        if (k_eh) options.quantile.k_eh = options.gsum.k_eh = *k_eh;
        if (k_kll) options.quantile.k_kll = *k_kll;
        if (sample_prob) options.sample.sample_prob = *sample_prob;
        if (options.dataset == "file" && !bench_cmd->count("--window")) options.window = 0;
        return run_bench(options, algo, out_path);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
