// SPDX-License-Identifier: Apache-2.0
#include "pw/transform.hpp"

#include <set>

namespace pw {
namespace {

std::optional<PropertyPath> first_shape_difference(const TypeDescriptor& a, const TypeDescriptor& b,
                                                   const PropertyPath& path) {
    if (a.code() != b.code()) return path;
    switch (a.code()) {
    case TypeCode::enumerated:
        if (a.labels() != b.labels()) return path;
        return std::nullopt;
    case TypeCode::array:
        if (a.declared_rank() != b.declared_rank() || !same_shape(a.element(), b.element())) return path;
        return std::nullopt;
    case TypeCode::container: {
        auto n = std::min(a.fields().size(), b.fields().size());
        for (std::size_t i = 0; i < n; ++i) {
            const auto& fa = a.fields()[i];
            const auto& fb = b.fields()[i];
            if (fa.name != fb.name) return path.child(fa.name);
            if (auto d = first_shape_difference(*fa.type, *fb.type, path.child(fa.name))) return d;
        }
        if (a.fields().size() > n) return path.child(a.fields()[n].name);
        if (b.fields().size() > n) return path.child(b.fields()[n].name);
        return std::nullopt;
    }
    default: return std::nullopt;
    }
}

std::string join(const std::vector<PropertyPath>& paths) {
    std::string out;
    for (const auto& p : paths) {
        if (!out.empty()) out += ", ";
        out += p.to_string();
    }
    return out;
}

} // namespace

ComparisonReport compare(const DataSource& a, const DataSource& b) {
    ComparisonReport report;
    auto da = a.describe();
    auto db = b.describe();
    if (!same_shape(da, db)) {
        report.first_difference = first_shape_difference(*da, *db, PropertyPath::root());
        if (!report.first_difference) report.first_difference = PropertyPath::root();
        return report;
    }
    report.shape_equal = true;
    report.value_equal = true;
    for (const auto& path : leaf_paths(a)) {
        auto ha = a.locate(path);
        auto hb = b.locate(path);
        if (a.read(*ha) != b.read(*hb)) {
            report.value_equal = false;
            report.first_difference = path;
            break;
        }
    }
    return report;
}

namespace {

struct PlannedWrite {
    PropertyPath path;
    Value value;
};

} // namespace

CopyReport copy_into(const DataSource& src, DataSource& dst, CopyPolicy policy) {
    CopyReport report;
    std::vector<PlannedWrite> plan;
    for (const auto& path : leaf_paths(dst)) {
        auto hd = dst.locate(path);
        auto hs = src.locate(path);
        if (!hs) {
            report.skipped_absent.push_back(path);
            continue;
        }
        const auto& ds = hs->descriptor();
        const auto& dd = hd->descriptor();
        if (same_shape(ds, dd)) {
            plan.push_back({path, src.read(*hs)});
            report.copied.push_back(path);
            continue;
        }
        if (policy.coercion == CopyPolicy::Coercion::allow && is_scalar_kind(ds->code()) &&
            is_scalar_kind(dd->code())) {
            try {
                auto r = convert(src.read(*hs), *ds, *dd);
                (r.lossy ? report.lossy : report.copied).push_back(path);
                plan.push_back({path, std::move(r.value)});
                continue;
            } catch (const Error&) {
                // falls through to incompatible
            }
        }
        report.skipped_incompatible.push_back(path);
    }

    if (policy.mode == CopyPolicy::Mode::strict) {
        if (!report.skipped_absent.empty() || !report.skipped_incompatible.empty()) {
            std::string msg = "strict copy refused:";
            if (!report.skipped_absent.empty()) msg += " absent [" + join(report.skipped_absent) + "]";
            if (!report.skipped_incompatible.empty())
                msg += " incompatible [" + join(report.skipped_incompatible) + "]";
            throw Error(ErrorCode::strict_copy, msg);
        }
        if (auto* generic = dynamic_cast<GenericSource*>(&dst)) {
            GenericSource staged = *generic;
            for (const auto& w : plan) staged.write(*staged.locate(w.path), w.value);
            generic->assign(staged.value());
            return report;
        }
    }
    for (const auto& w : plan) dst.write(*dst.locate(w.path), w.value);
    return report;
}

namespace {

void check_selection(std::span<const PropertyPath> paths) {
    if (paths.empty()) throw Error(ErrorCode::invalid_argument, "projection needs at least one path");
    std::set<PropertyPath> seen;
    std::set<std::string> names;
    for (const auto& p : paths) {
        if (p.is_root()) throw Error(ErrorCode::invalid_argument, "projection paths must name a property");
        if (!seen.insert(p).second) throw Error(ErrorCode::invalid_argument, "duplicate path '" + p.to_string() + "'");
        if (!names.insert(p.flattened()).second)
            throw Error(ErrorCode::invalid_argument, "paths collide on flattened name '" + p.flattened() + "'");
    }
}

} // namespace

DescriptorPtr projection_descriptor(const DescriptorPtr& schema, std::span<const PropertyPath> paths) {
    check_selection(paths);
    std::vector<FieldDescriptor> fields;
    std::vector<PropertyPath> missing;
    for (const auto& p : paths) {
        auto d = descriptor_at(schema, p);
        if (!d) {
            missing.push_back(p);
            continue;
        }
        fields.push_back({p.flattened(), d, {}});
    }
    if (!missing.empty()) throw Error(ErrorCode::absent_path, "absent: " + join(missing));
    return TypeDescriptor::container(std::move(fields));
}

Projection project(const DataSource& src, std::span<const PropertyPath> paths) {
    check_selection(paths);
    std::vector<FieldDescriptor> fields;
    Container values;
    std::vector<PropertyPath> missing;
    for (const auto& p : paths) {
        auto h = src.locate(p);
        if (!h) {
            missing.push_back(p);
            continue;
        }
        fields.push_back({p.flattened(), h->descriptor(), {}});
        values.fields.push_back({p.flattened(), src.read(*h)});
    }
    if (!missing.empty()) throw Error(ErrorCode::absent_path, "absent: " + join(missing));
    return {TypeDescriptor::container(std::move(fields)), Value(std::move(values))};
}

} // namespace pw
