// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pw/protocol.hpp"
#include "pw/pv.hpp"

namespace pw {

struct EventDefinition {
    std::string name;
    proto::PredicateSpec predicate;
    int line = 0;
};

struct PvDefinition {
    std::string name;
    /// Declared fields plus `value` (f64 unless declared) and `time_stamp`.
    DescriptorPtr schema;
    /// Partial container from `init` statements.
    Value initial;
    PvOptions options;
    std::vector<EventDefinition> events;
    int line = 0;
};

struct ScenarioStep {
    enum class Kind { post, composite, alarm };
    std::int64_t at_ms = 0;
    Kind kind = Kind::post;
    std::string pv;
    Value update;
    Severity severity = Severity::none;
    std::uint16_t condition = 0;
    int line = 0;
};

/// Line-oriented node description:
///
///     listen 127.0.0.1:5075
///     event every_update always
///     pv temp {
///       field value f64
///       field calib.gain f32
///       field mode enum(off,on)
///       field trace f64[1]
///       deadband 5 ; archive_deadband 0.5
///       init units "degC"
///       event beam_trip below value 0
///     }
///     at 100 post temp value 1.5
///     at 200 composite temp {value=2, units="K"}
///     at 300 alarm temp major 3
///
/// `#` starts a comment. Statements end at `;` or a line break. Errors are
/// Error(config) with a `line N:` prefix.
struct NodeConfig {
    std::optional<std::string> listen;
    std::vector<EventDefinition> node_events;
    std::vector<PvDefinition> pvs;
    std::vector<ScenarioStep> scenario;

    const PvDefinition* find(std::string_view name) const;
};

NodeConfig parse_config(std::string_view text);
/// Scenario lines (`at ...`) checked against the PVs of `config`.
std::vector<ScenarioStep> parse_scenario(std::string_view text, const NodeConfig& config);
NodeConfig load_config_file(const std::string& path);

/// Parses a field type: a code name, `enum(a,b)`, or `T[]`/`T[rank]`.
DescriptorPtr parse_field_type(std::string_view text);

/// Creates every PV and event kind. Throws Error(config) naming the line.
void populate(Database& db, const NodeConfig& config);

} // namespace pw
