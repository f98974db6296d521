// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pw/config.hpp"
#include "pw/pv.hpp"
#include "pw/transport.hpp"

namespace pw {

inline constexpr std::string_view default_address = "127.0.0.1:5075";

struct ServerStats {
    std::size_t connections = 0;
    std::uint64_t frames_in = 0;
    std::uint64_t monitor_events = 0;
    std::uint64_t snapshot_events = 0;
};

/// Serves a Database over one listener. Each connection gets a reader
/// thread; one fan-out thread turns committed updates into MONITOR_EVT and
/// SNAP_EVT frames outside every PV lock.
class Server {
public:
    /// Binds and starts serving. Throws Error(transport) when binding fails.
    static std::unique_ptr<Server> start(std::shared_ptr<Database> db, std::string_view address = default_address);
    /// Builds the database from `config`, binds to its listen address (or
    /// `address` when given) and starts its scenario.
    static std::unique_ptr<Server> start(const NodeConfig& config, std::string_view address = {});

    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Connectable address; the chosen port when bound to port 0.
    std::string address() const;
    Database& database() noexcept;
    std::shared_ptr<Database> database_ptr() const noexcept;

    /// Runs the steps on a background thread, timed from this call.
    void run_scenario(std::vector<ScenarioStep> steps);
    /// Blocks until every step started so far has been applied.
    void wait_scenario();

    ServerStats stats() const;

    /// Closes the listener and every connection. Idempotent.
    void stop();

private:
    struct Impl;
    explicit Server(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

/// Applies one scenario step to the database.
CommitResult apply_step(Database& db, const ScenarioStep& step);

} // namespace pw
