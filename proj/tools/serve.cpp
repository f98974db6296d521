// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "cli.hpp"
#include "demos.hpp"
#include "pw/server.hpp"

namespace pw::cli {

using namespace std::chrono_literals;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::config, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

int pv_serve(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Serve process variables from a config file or a built-in demo", "pv-serve"};
    std::string config_path, listen, demo_name, scenario_path;
    demo::Options dopts;
    int period = 20, slew = 100, delay = 0, duration = 0;
    bool once = false;
    app.add_option("--config", config_path, "Node description file");
    app.add_option("--demo", demo_name, "telescope or archiver");
    app.add_option("--listen", listen, "Listen address (default from config, else " + std::string(default_address) + ")");
    app.add_option("--scenario", scenario_path, "Extra timed steps (`at MS ...` lines)");
    app.add_option("--spool", dopts.spool, "Demo output, JSON lines");
    app.add_option("--pulses", dopts.pulses, "Archiver pulses")->check(CLI::NonNegativeNumber);
    app.add_option("--period", period, "Milliseconds between archiver pulses")->check(CLI::NonNegativeNumber);
    app.add_option("--slew", slew, "Milliseconds the telescope spends slewing")->check(CLI::NonNegativeNumber);
    app.add_option("--delay", delay, "Milliseconds before the first archiver pulse")->check(CLI::NonNegativeNumber);
    app.add_option("--duration", duration, "Stop after this many milliseconds (0 runs until interrupted)")
        ->check(CLI::NonNegativeNumber);
    app.add_flag("--once", once, "Stop when the scenario or demo script has finished");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? ok : usage;
    }
    if (config_path.empty() == demo_name.empty()) {
        err << "pv-serve: exactly one of --config or --demo is required\n";
        return usage;
    }
    if (!demo_name.empty() && !demo::is_demo(demo_name)) {
        err << "pv-serve: unknown demo '" << demo_name << "' (telescope, archiver)\n";
        return usage;
    }
    dopts.period = std::chrono::milliseconds(period);
    dopts.slew = std::chrono::milliseconds(slew);
    dopts.delay = std::chrono::milliseconds(delay);

    try {
        NodeConfig cfg = demo_name.empty() ? parse_config(read_file(config_path)) : demo::demo_config(demo_name);
        if (!scenario_path.empty()) {
            auto extra = parse_scenario(read_file(scenario_path), cfg);
            cfg.scenario.insert(cfg.scenario.end(), extra.begin(), extra.end());
            std::stable_sort(cfg.scenario.begin(), cfg.scenario.end(),
                             [](const ScenarioStep& a, const ScenarioStep& b) { return a.at_ms < b.at_ms; });
        }
        auto steps = std::move(cfg.scenario);
        cfg.scenario.clear();
        std::string addr = !listen.empty() ? listen : cfg.listen ? *cfg.listen : std::string(default_address);
        auto server = Server::start(cfg, addr);

        std::unique_ptr<demo::Demo> running;
        if (!demo_name.empty()) running = demo::start(demo_name, *server, dopts);
        out << "listening " << server->address() << std::endl;

        std::atomic<bool> script_done{steps.empty()};
        std::jthread script([&](std::stop_token st) {
            auto t0 = std::chrono::steady_clock::now();
            std::mutex mu;
            std::condition_variable_any cv;
            for (const auto& step : steps) {
                std::unique_lock lock(mu);
                cv.wait_until(lock, st, t0 + std::chrono::milliseconds(step.at_ms), [] { return false; });
                if (st.stop_requested()) return;
                try {
                    apply_step(server->database(), step);
                } catch (const Error& e) {
                    err << "pv-serve: line " << step.line << ": " << e.what() << "\n";
                }
            }
            script_done = true;
        });

        auto t0 = std::chrono::steady_clock::now();
        while (!interrupted()) {
            if (duration > 0 && std::chrono::steady_clock::now() - t0 >= std::chrono::milliseconds(duration)) break;
            if (once && script_done && (!running || running->done())) break;
            std::this_thread::sleep_for(20ms);
        }
        script.request_stop();
        script.join();

        int rc = ok;
        if (running) {
            if (demo_name == "archiver" && running->done()) {
                auto log = demo::archive_log(*running);
                running->stop();
                auto check = demo::check_archive(dopts.spool.empty() ? "archive.jsonl" : dopts.spool, log);
                out << running->summary() << ", " << (check.coherent() ? "coherent" : "INCOHERENT") << std::endl;
            } else {
                running->stop();
                out << running->summary() << std::endl;
            }
        }
        server->stop();
        return rc;
    } catch (const Error& e) {
        err << "pv-serve: " << to_string(e.code()) << ": " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        err << "pv-serve: " << e.what() << "\n";
        return usage;
    }
}

} // namespace pw::cli
