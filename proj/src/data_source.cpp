// SPDX-License-Identifier: Apache-2.0
#include "pw/data_source.hpp"

#include <atomic>

#include "pw/transform.hpp"

namespace pw {
namespace {

std::uint64_t next_source_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

void walk(const DataSource& src, const TypeDescriptor& d, const PropertyPath& path,
          const DataSource::Visitor& visit) {
    for (const auto& f : d.fields()) {
        auto sub = path.child(f.name);
        if (f.type->code() == TypeCode::array) {
            auto h = src.locate(sub);
            auto v = src.read(*h);
            visit(sub, *f.type, v.as_array().extents);
        } else {
            visit(sub, *f.type, {});
        }
        if (f.type->code() == TypeCode::container) walk(src, *f.type, sub, visit);
    }
}

} // namespace

DataSource::DataSource() : id_(next_source_id()) {}
DataSource::DataSource(const DataSource&) : id_(next_source_id()) {}
DataSource& DataSource::operator=(const DataSource&) { return *this; }

void DataSource::traverse(const Visitor& visit) const {
    auto d = describe();
    if (d->code() != TypeCode::container) {
        auto h = locate(PropertyPath::root());
        if (d->code() == TypeCode::array) {
            auto v = read(*h);
            visit(PropertyPath::root(), *d, v.as_array().extents);
        } else {
            visit(PropertyPath::root(), *d, {});
        }
        return;
    }
    walk(*this, *d, PropertyPath::root(), visit);
}

std::optional<std::vector<std::uint16_t>> resolve_route(const DescriptorPtr& root, const PropertyPath& path) {
    std::vector<std::uint16_t> route;
    route.reserve(path.size());
    const TypeDescriptor* cur = root.get();
    for (const auto& seg : path.segments()) {
        if (!cur || cur->code() != TypeCode::container) return std::nullopt;
        auto idx = cur->field_index(seg);
        if (!idx) return std::nullopt;
        route.push_back(static_cast<std::uint16_t>(*idx));
        cur = cur->fields()[*idx].type.get();
    }
    return route;
}

std::optional<FieldHandle> DataSource::locate(const PropertyPath& path) const {
    auto d = describe();
    if (path.is_root()) {
        if (d->code() == TypeCode::container) return std::nullopt;
        return make_handle(path, d, {});
    }
    auto route = resolve_route(d, path);
    if (!route) return std::nullopt;
    return make_handle(path, descriptor_at(d, path), std::move(*route));
}

std::optional<FieldHandle> DataSource::locate(std::string_view path) const {
    return locate(PropertyPath::parse(path));
}

void DataSource::check_handle(const FieldHandle& handle) const {
    if (handle.source_id() != id_)
        throw Error(ErrorCode::handle_mismatch,
                    "handle for '" + handle.path().to_string() + "' was issued by another source");
}

Value DataSource::read(const FieldHandle& handle) const {
    check_handle(handle);
    return do_read(handle);
}

void DataSource::write(const FieldHandle& handle, const Value& value) {
    check_handle(handle);
    if (!writable(handle)) throw Error(ErrorCode::access, "'" + handle.path().to_string() + "' is read-only");
    const auto& d = *handle.descriptor();
    if (coerces() && value.code() != d.code() && is_scalar_kind(value.code()) && is_scalar_kind(d.code())) {
        DescriptorPtr from = value.code() == TypeCode::enumerated ? handle.descriptor()
                                                                  : TypeDescriptor::scalar(value.code());
        auto converted = convert(value, *from, d);
        do_write(handle, converted.value);
        return;
    }
    ensure_conforms(value, d);
    do_write(handle, value);
}

std::vector<PropertyPath> traverse_paths(const DataSource& source) {
    std::vector<PropertyPath> out;
    source.traverse([&](const PropertyPath& p, const TypeDescriptor&, std::span<const std::uint32_t>) { out.push_back(p); });
    return out;
}

std::vector<PropertyPath> leaf_paths(const DataSource& source) {
    std::vector<PropertyPath> out;
    source.traverse([&](const PropertyPath& p, const TypeDescriptor& d, std::span<const std::uint32_t>) {
        if (d.code() != TypeCode::container) out.push_back(p);
    });
    return out;
}

// ---------------------------------------------------------------------------

GenericSource::GenericSource(DescriptorPtr descriptor) : descriptor_(std::move(descriptor)) {
    ensure_valid(*descriptor_);
    value_ = default_value(*descriptor_);
}

GenericSource::GenericSource(DescriptorPtr descriptor, Value value)
    : GenericSource(std::move(descriptor), std::move(value), Options{}) {}

GenericSource::GenericSource(DescriptorPtr descriptor, Value value, Options options)
    : descriptor_(std::move(descriptor)), value_(std::move(value)), options_(std::move(options)) {
    ensure_valid(*descriptor_);
    ensure_conforms(value_, *descriptor_);
}

void GenericSource::traverse(const Visitor& visit) const {
    if (descriptor_->code() != TypeCode::container) {
        std::span<const std::uint32_t> ext;
        if (value_.is<Array>()) ext = value_.as_array().extents;
        visit(PropertyPath::root(), *descriptor_, ext);
        return;
    }
    // Walk descriptor and value together; no per-field lookups.
    auto rec = [&](auto& self, const TypeDescriptor& d, const Value& v, const PropertyPath& path) -> void {
        const auto& c = v.as_container();
        for (std::size_t i = 0; i < d.fields().size(); ++i) {
            const auto& f = d.fields()[i];
            const auto& fv = c.fields[i].value;
            auto sub = path.child(f.name);
            std::span<const std::uint32_t> ext;
            if (fv.is<Array>()) ext = fv.as_array().extents;
            visit(sub, *f.type, ext);
            if (f.type->code() == TypeCode::container) self(self, *f.type, fv, sub);
        }
    };
    rec(rec, *descriptor_, value_, PropertyPath::root());
}

bool GenericSource::writable(const FieldHandle& h) const noexcept {
    if (options_.read_only.empty()) return true;
    // A read-only container protects everything beneath it.
    auto p = h.path();
    while (true) {
        if (options_.read_only.count(p)) return false;
        if (p.is_root()) return true;
        p = p.parent();
    }
}

void GenericSource::assign(Value value) {
    ensure_conforms(value, *descriptor_);
    value_ = std::move(value);
}

namespace {

template <class V>
V* follow(V* v, std::span<const std::uint16_t> route) {
    for (auto idx : route) v = &v->as_container().fields[idx].value;
    return v;
}

} // namespace

Value GenericSource::do_read(const FieldHandle& handle) const { return *follow(&value_, handle.route()); }

void GenericSource::do_write(const FieldHandle& handle, const Value& value) {
    *follow(&value_, handle.route()) = value;
}

} // namespace pw
