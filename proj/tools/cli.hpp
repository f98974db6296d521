// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "pw/error.hpp"
#include "pw/pv.hpp"

namespace pw::cli {

enum Exit : int { ok = 0, usage = 1, semantic = 2, transport = 3, mismatch = 4 };

/// Fault class of an error code.
int exit_code(ErrorCode code) noexcept;

/// `2026-10-16T08:30:00.000000123Z`.
std::string iso8601(Timestamp ns);

struct Leaf {
    std::string path;
    DescriptorPtr type;
    Value value;
};

/// One line of tool output.
struct Record {
    std::uint64_t seq = 0;
    std::string pv;
    std::string event;
    Timestamp timestamp = 0;
    std::vector<Leaf> values;
};

/// Leaves of v in traverse order, with dotted paths under `prefix`.
void flatten(const DescriptorPtr& d, const Value& v, const std::string& prefix, std::vector<Leaf>& out);

/// `seq=3 pv=temp event=get timestamp=... value=1.5 units="K"`
std::string to_text(const Record& r);
/// One JSON object with keys seq, pv, event, timestamp, values.
std::string to_json(const Record& r);

/// Set by the tool mains on SIGINT/SIGTERM.
std::atomic<bool>& interrupted() noexcept;

/// Entry points shared by the executables and the tests. argv[0] is the
/// tool name.
int pv_info(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int pv_get(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int pv_put(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int pv_monitor(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int pv_snapshot(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int pv_serve(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience for tests: runs `tool` with the given arguments.
int run(std::string_view tool, const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace pw::cli
