// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "pw/config.hpp"
#include "pw/server.hpp"

namespace pw::demo {

struct Options {
    /// JSON-lines output; empty disables spooling for the telescope demo.
    std::string spool;
    int pulses = 10;
    std::chrono::milliseconds period{20};
    /// How long the telescope stays in the slewing state.
    std::chrono::milliseconds slew{100};
    /// Pause before the first pulse.
    std::chrono::milliseconds delay{0};
};

class Demo {
public:
    virtual ~Demo() = default;
    /// True once the scripted part has run to completion.
    virtual bool done() const = 0;
    virtual bool wait_done(std::chrono::milliseconds timeout) = 0;
    virtual std::string summary() const = 0;
    virtual void stop() = 0;
};

bool is_demo(std::string_view name) noexcept;
std::vector<std::string> demo_names();

/// Node description the demo runs on.
NodeConfig demo_config(std::string_view name);

/// Attaches the demo logic to a server built from demo_config(name).
/// Throws Error(transport) when the spool cannot be written.
std::unique_ptr<Demo> start(std::string_view name, Server& server, const Options& options);

/// `target_changed` fires when a commit changes both ra and dec.
bool target_changed(const Value& previous, const Value& current);

struct ArchiveCheck {
    std::size_t lines = 0;
    std::size_t unparsable = 0;
    std::size_t incoherent = 0;
    std::size_t unmatched = 0;
    bool coherent() const noexcept { return lines > 0 && unparsable == 0 && incoherent == 0 && unmatched == 0; }
};

/// Checks every spooled snapshot against the commit log of the node: the
/// members must equal the state after every commit up to the line's
/// seq_tag, and a pulse commit must carry that tag.
ArchiveCheck check_archive(const std::string& spool, const std::vector<CommitEvent>& log);

/// Commit log kept by a running archiver demo.
std::vector<CommitEvent> archive_log(const Demo& archiver);

} // namespace pw::demo
