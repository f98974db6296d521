// SPDX-License-Identifier: Apache-2.0
#include "pw/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pw/literal.hpp"

namespace pw {

const PvDefinition* NodeConfig::find(std::string_view name) const {
    for (const auto& p : pvs)
        if (p.name == name) return &p;
    return nullptr;
}

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
    throw Error(ErrorCode::config, "line " + std::to_string(line) + ": " + msg);
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

/// Drops a trailing comment, ignoring `#` inside quotes.
std::string_view strip_comment(std::string_view line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (quoted && line[i] == '\\') ++i;
        else if (line[i] == '"') quoted = !quoted;
        else if (!quoted && line[i] == '#') return line.substr(0, i);
    }
    return line;
}

/// Splits on `;` outside quotes and brackets.
std::vector<std::string_view> split_statements(std::string_view line) {
    std::vector<std::string_view> out;
    bool quoted = false;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '\\') ++i;
            else if (c == '"') quoted = false;
        } else if (c == '"') {
            quoted = true;
        } else if (c == '[' || c == '(') {
            ++depth;
        } else if (c == ']' || c == ')') {
            --depth;
        } else if (c == ';' && depth == 0) {
            out.push_back(trim(line.substr(start, i - start)));
            start = i + 1;
        }
    }
    out.push_back(trim(line.substr(start)));
    return out;
}

/// First whitespace-separated word and the trimmed remainder.
std::pair<std::string_view, std::string_view> head(std::string_view s) {
    s = trim(s);
    auto sp = s.find_first_of(" \t");
    if (sp == std::string_view::npos) return {s, {}};
    return {s.substr(0, sp), trim(s.substr(sp + 1))};
}

double parse_number(int line, std::string_view text, std::string_view what) {
    double v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size() || text.empty())
        fail(line, "expected a number for " + std::string(what) + ", got '" + std::string(text) + "'");
    return v;
}

PropertyPath parse_path(int line, std::string_view text) {
    auto p = PropertyPath::try_parse(text);
    if (!p) fail(line, "malformed property path '" + std::string(text) + "'");
    return *p;
}

/// Field tree in declaration order.
struct Node {
    std::string name;
    DescriptorPtr leaf;
    std::vector<Node> children;
    int line = 0;

    Node* child(const std::string& n) {
        for (auto& c : children)
            if (c.name == n) return &c;
        return nullptr;
    }

    DescriptorPtr build() const {
        if (leaf) return leaf;
        std::vector<FieldDescriptor> fields;
        for (const auto& c : children) fields.push_back({c.name, c.build(), {}});
        return TypeDescriptor::container(std::move(fields));
    }
};

void add_field(Node& root, int line, const PropertyPath& path, DescriptorPtr type) {
    Node* cur = &root;
    for (std::size_t i = 0; i < path.size(); ++i) {
        const auto& seg = path.segments()[i];
        Node* next = cur->child(seg);
        bool last = i + 1 == path.size();
        if (next && (last || next->leaf))
            fail(line, "field '" + path.to_string() + "' conflicts with the declaration on line " +
                           std::to_string(next->line));
        if (!next) {
            cur->children.push_back({seg, nullptr, {}, line});
            next = &cur->children.back();
        }
        cur = next;
    }
    cur->leaf = std::move(type);
}

struct PvBuilder {
    PvDefinition def;
    Node root;
    std::vector<std::pair<int, std::pair<PropertyPath, std::string>>> inits;
};

void finish(PvBuilder& b, NodeConfig& cfg) {
    if (!b.root.child("value")) b.root.children.insert(b.root.children.begin(), {"value", TypeDescriptor::scalar(TypeCode::f64), {}, b.def.line});
    if (!b.root.child("time_stamp")) b.root.children.push_back({"time_stamp", TypeDescriptor::scalar(TypeCode::i64), {}, b.def.line});
    auto schema = b.root.build();
    auto violations = validate_descriptor(*schema);
    if (!violations.empty())
        fail(b.def.line, "PV '" + b.def.name + "' has an invalid schema: " + std::string(to_string(violations[0].kind)) +
                             " " + violations[0].path);
    // Full schema including built-ins, so `init units ...` resolves.
    DescriptorPtr full;
    try {
        full = ProcessVariable::create(b.def.name, schema)->schema();
    } catch (const Error& e) {
        fail(b.def.line, "PV '" + b.def.name + "': " + e.what());
    }
    b.def.schema = schema;
    b.def.initial = Value::container({});
    for (const auto& [line, init] : b.inits) {
        try {
            merge_partial(b.def.initial, partial_update(*full, init.first, init.second));
        } catch (const Error& e) {
            fail(line, e.what());
        }
    }
    cfg.pvs.push_back(std::move(b.def));
}

EventDefinition parse_event(int line, std::string_view rest) {
    auto [name, pred] = head(rest);
    if (!is_valid_name(name)) fail(line, "invalid event kind name '" + std::string(name) + "'");
    if (is_builtin_event(name)) fail(line, "event kind '" + std::string(name) + "' is built in");
    try {
        return {std::string(name), proto::PredicateSpec::parse(pred), line};
    } catch (const Error& e) {
        fail(line, e.what());
    }
}

std::optional<Severity> parse_severity(std::string_view s) {
    for (auto sev : {Severity::none, Severity::minor, Severity::major, Severity::invalid})
        if (to_string(sev) == s) return sev;
    return std::nullopt;
}

ScenarioStep parse_step(int line, std::string_view rest, const NodeConfig& cfg) {
    ScenarioStep step;
    step.line = line;
    auto [t, r1] = head(rest);
    std::int64_t at = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), at);
    if (ec != std::errc{} || p != t.data() + t.size() || at < 0) fail(line, "expected a time in ms after 'at'");
    step.at_ms = at;
    auto [verb, r2] = head(r1);
    auto [pv, r3] = head(r2);
    step.pv = std::string(pv);
    const auto* def = cfg.find(pv);
    if (!def) fail(line, "unknown PV '" + std::string(pv) + "'");
    auto full = ProcessVariable::create(def->name, def->schema)->schema();
    try {
        if (verb == "post") {
            step.kind = ScenarioStep::Kind::post;
            auto [path, lit] = head(r3);
            if (lit.empty()) fail(line, "post needs a path and a literal");
            step.update = partial_update(*full, parse_path(line, path), lit);
        } else if (verb == "composite") {
            step.kind = ScenarioStep::Kind::composite;
            if (r3.size() < 2 || r3.front() != '{' || r3.back() != '}') fail(line, "composite needs {path=literal,...}");
            auto body = r3.substr(1, r3.size() - 2);
            step.update = Value::container({});
            // Split on commas outside quotes and brackets.
            std::vector<std::string_view> parts;
            bool quoted = false;
            int depth = 0;
            std::size_t start = 0;
            for (std::size_t i = 0; i <= body.size(); ++i) {
                char c = i < body.size() ? body[i] : ',';
                if (quoted) {
                    if (c == '\\') ++i;
                    else if (c == '"') quoted = false;
                } else if (c == '"') quoted = true;
                else if (c == '[') ++depth;
                else if (c == ']') --depth;
                else if (c == ',' && depth == 0) {
                    parts.push_back(trim(body.substr(start, i - start)));
                    start = i + 1;
                }
            }
            for (auto part : parts) {
                auto eq = part.find('=');
                if (eq == std::string_view::npos) fail(line, "expected path=literal, got '" + std::string(part) + "'");
                merge_partial(step.update,
                              partial_update(*full, parse_path(line, trim(part.substr(0, eq))), trim(part.substr(eq + 1))));
            }
            if (step.update.as_container().fields.empty()) fail(line, "empty composite");
        } else if (verb == "alarm") {
            step.kind = ScenarioStep::Kind::alarm;
            auto [sev, code] = head(r3);
            auto s = parse_severity(sev);
            if (!s) fail(line, "unknown severity '" + std::string(sev) + "'");
            step.severity = *s;
            step.condition = static_cast<std::uint16_t>(code.empty() ? 0 : parse_number(line, code, "condition"));
        } else {
            fail(line, "unknown scenario action '" + std::string(verb) + "'");
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::config) throw;
        fail(line, e.what());
    }
    return step;
}

} // namespace

DescriptorPtr parse_field_type(std::string_view text) {
    text = trim(text);
    if (text.ends_with(']')) {
        auto open = text.rfind('[');
        if (open == std::string_view::npos) throw Error(ErrorCode::parse, "bad array type '" + std::string(text) + "'");
        auto rank_text = text.substr(open + 1, text.size() - open - 2);
        unsigned rank = 0;
        if (!rank_text.empty()) {
            auto [p, ec] = std::from_chars(rank_text.data(), rank_text.data() + rank_text.size(), rank);
            if (ec != std::errc{} || p != rank_text.data() + rank_text.size() || rank > max_rank)
                throw Error(ErrorCode::parse, "bad array rank in '" + std::string(text) + "'");
        }
        auto element = parse_field_type(text.substr(0, open));
        if (element->code() == TypeCode::array) throw Error(ErrorCode::parse, "arrays of arrays are not allowed");
        return TypeDescriptor::array(element, static_cast<std::uint8_t>(rank));
    }
    if (text.starts_with("enum(") && text.ends_with(')')) {
        std::vector<std::string> labels;
        auto body = text.substr(5, text.size() - 6);
        std::size_t start = 0;
        while (true) {
            auto comma = body.find(',', start);
            auto label = trim(body.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
            if (label.empty()) throw Error(ErrorCode::parse, "empty enumeration label in '" + std::string(text) + "'");
            labels.emplace_back(label);
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        auto d = TypeDescriptor::enumerated(std::move(labels));
        if (!validate_descriptor(*d).empty()) throw Error(ErrorCode::parse, "invalid enumeration '" + std::string(text) + "'");
        return d;
    }
    auto code = parse_code(text);
    if (!code || !is_scalar_kind(*code) || *code == TypeCode::enumerated)
        throw Error(ErrorCode::parse, "unknown type '" + std::string(text) + "'");
    return TypeDescriptor::scalar(*code);
}

NodeConfig parse_config(std::string_view text) {
    NodeConfig cfg;
    std::optional<PvBuilder> open;
    std::set<std::string> names;
    std::vector<std::pair<int, std::string_view>> scenario_lines;

    int line = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line;
        auto content = trim(strip_comment(raw));
        if (content.empty()) continue;
        if (!open && head(content).first == "at") {
            scenario_lines.emplace_back(line, head(content).second);
            continue;
        }
        for (auto stmt : split_statements(content)) {
            while (!stmt.empty()) {
                if (open && stmt.front() == '}') {
                    finish(*open, cfg);
                    open.reset();
                    stmt = trim(stmt.substr(1));
                    continue;
                }
                // A closing brace may end a statement on the same line.
                std::string_view rest_after;
                if (open) {
                    bool quoted = false;
                    for (std::size_t i = 0; i < stmt.size(); ++i) {
                        if (quoted && stmt[i] == '\\') ++i;
                        else if (stmt[i] == '"') quoted = !quoted;
                        else if (!quoted && stmt[i] == '}') {
                            rest_after = stmt.substr(i);
                            stmt = trim(stmt.substr(0, i));
                            break;
                        }
                    }
                }
                auto [word, rest] = head(stmt);
                if (!open) {
                    if (word == "listen") {
                        if (rest.empty()) fail(line, "listen needs an address");
                        cfg.listen = std::string(rest);
                    } else if (word == "event") {
                        auto ev = parse_event(line, rest);
                        for (const auto& e : cfg.node_events)
                            if (e.name == ev.name) fail(line, "duplicate event kind '" + ev.name + "'");
                        cfg.node_events.push_back(std::move(ev));
                    } else if (word == "pv") {
                        auto [name, tail] = head(rest);
                        if (!tail.starts_with('{')) fail(line, "expected '{' after PV name");
                        if (!is_valid_name(name)) fail(line, "invalid PV name '" + std::string(name) + "'");
                        if (!names.insert(std::string(name)).second)
                            fail(line, "duplicate PV name '" + std::string(name) + "'");
                        open.emplace();
                        open->def.name = std::string(name);
                        open->def.line = line;
                        rest_after = trim(tail.substr(1));
                    } else if (word == "at") {
                        scenario_lines.emplace_back(line, rest);
                    } else {
                        fail(line, "unknown statement '" + std::string(word) + "'");
                    }
                } else if (!word.empty()) {
                    auto& b = *open;
                    if (word == "field") {
                        auto [path, type] = head(rest);
                        if (type.empty()) fail(line, "field needs a path and a type");
                        DescriptorPtr d;
                        try {
                            d = parse_field_type(type);
                        } catch (const Error& e) {
                            fail(line, e.what());
                        }
                        add_field(b.root, line, parse_path(line, path), d);
                    } else if (word == "deadband" || word == "archive_deadband") {
                        double v = parse_number(line, rest, word);
                        if (!(v >= 0)) fail(line, std::string(word) + " must be >= 0");
                        (word == "deadband" ? b.def.options.dead_band : b.def.options.archive_dead_band) = v;
                    } else if (word == "init") {
                        auto [path, lit] = head(rest);
                        if (lit.empty()) fail(line, "init needs a path and a literal");
                        b.inits.push_back({line, {parse_path(line, path), std::string(lit)}});
                    } else if (word == "event") {
                        auto ev = parse_event(line, rest);
                        for (const auto& e : b.def.events)
                            if (e.name == ev.name) fail(line, "duplicate event kind '" + ev.name + "'");
                        b.def.events.push_back(std::move(ev));
                    } else {
                        fail(line, "unknown PV statement '" + std::string(word) + "'");
                    }
                }
                stmt = rest_after;
            }
        }
    }
    if (open) fail(open->def.line, "PV '" + open->def.name + "' is not closed");
    for (const auto& [l, s] : scenario_lines) cfg.scenario.push_back(parse_step(l, s, cfg));
    std::stable_sort(cfg.scenario.begin(), cfg.scenario.end(),
                     [](const ScenarioStep& a, const ScenarioStep& b) { return a.at_ms < b.at_ms; });
    return cfg;
}

std::vector<ScenarioStep> parse_scenario(std::string_view text, const NodeConfig& config) {
    std::vector<ScenarioStep> out;
    int line = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line;
        auto content = trim(strip_comment(raw));
        if (content.empty()) continue;
        auto [word, rest] = head(content);
        if (word != "at") fail(line, "scenario lines start with 'at'");
        out.push_back(parse_step(line, rest, config));
    }
    std::stable_sort(out.begin(), out.end(), [](const ScenarioStep& a, const ScenarioStep& b) { return a.at_ms < b.at_ms; });
    return out;
}

NodeConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::config, "cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void populate(Database& db, const NodeConfig& config) {
    for (const auto& e : config.node_events) {
        try {
            db.register_event_kind(e.name, e.predicate.compile());
        } catch (const Error& err) {
            fail(e.line, err.what());
        }
    }
    for (const auto& def : config.pvs) {
        std::shared_ptr<ProcessVariable> pv;
        try {
            pv = db.add(def.name, def.schema, def.initial, def.options);
        } catch (const Error& err) {
            fail(def.line, err.what());
        }
        for (const auto& e : def.events) {
            try {
                pv->register_event_kind(e.name, e.predicate.compile());
            } catch (const Error& err) {
                fail(e.line, err.what());
            }
        }
    }
}

} // namespace pw
