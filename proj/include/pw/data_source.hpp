// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "pw/types.hpp"

namespace pw {

/// Result of DataSource::locate(). Binds the issuing source, the resolved
/// path and the target's descriptor. Handles are immutable tokens; using
/// one against a different source raises handle_mismatch.
class FieldHandle {
public:
    std::uint64_t source_id() const noexcept { return source_id_; }
    const PropertyPath& path() const noexcept { return path_; }
    const DescriptorPtr& descriptor() const noexcept { return descriptor_; }
    /// Field index at each container level from the root to the target.
    std::span<const std::uint16_t> route() const noexcept { return route_; }

private:
    friend class DataSource;
    FieldHandle(std::uint64_t source, PropertyPath path, DescriptorPtr descriptor, std::vector<std::uint16_t> route)
        : source_id_(source), path_(std::move(path)), descriptor_(std::move(descriptor)), route_(std::move(route)) {}

    std::uint64_t source_id_;
    PropertyPath path_;
    DescriptorPtr descriptor_;
    std::vector<std::uint16_t> route_;
};

/// The introspection contract. Application data implements this to expose
/// its own shape and contents without adopting any particular storage.
///
/// Implementors supply describe(), do_read() and do_write(). traverse() and
/// locate() have descriptor-driven defaults which are correct for any
/// implementation; override them when the native layout allows a faster
/// path. A source is not required to be usable from several threads at once.
class DataSource {
public:
    /// Called once per property, depth-first, in declaration order. Extents
    /// are the current vector bounds (empty for non-arrays).
    using Visitor =
        std::function<void(const PropertyPath& path, const TypeDescriptor& type, std::span<const std::uint32_t> extents)>;

    DataSource();
    DataSource(const DataSource&);
    DataSource& operator=(const DataSource&);
    virtual ~DataSource() = default;

    /// Unique per instance; copies receive a fresh identity.
    std::uint64_t source_id() const noexcept { return id_; }

    virtual DescriptorPtr describe() const = 0;

    /// Containers at the root are not reported themselves; a non-container
    /// root is reported once under the root path.
    virtual void traverse(const Visitor& visit) const;

    virtual std::optional<FieldHandle> locate(const PropertyPath& path) const;

    /// Parses text first; a malformed path throws path_syntax, which is
    /// distinct from an absent property (nullopt).
    std::optional<FieldHandle> locate(std::string_view path) const;

    /// Throws handle_mismatch for a foreign handle.
    Value read(const FieldHandle& handle) const;

    /// Throws handle_mismatch, access (read-only field) or type_mismatch.
    /// Sources that opt into coercion convert scalar values first.
    void write(const FieldHandle& handle, const Value& value);

    /// Whether write() converts mismatched scalars using transform rules.
    virtual bool coerces() const noexcept { return false; }
    virtual bool writable(const FieldHandle&) const noexcept { return true; }

protected:
    virtual Value do_read(const FieldHandle& handle) const = 0;
    virtual void do_write(const FieldHandle& handle, const Value& value) = 0;

    FieldHandle make_handle(PropertyPath path, DescriptorPtr descriptor, std::vector<std::uint16_t> route) const {
        return FieldHandle(id_, std::move(path), std::move(descriptor), std::move(route));
    }

    void check_handle(const FieldHandle& handle) const;

private:
    std::uint64_t id_;
};

/// Every path traverse() reports, in visiting order.
std::vector<PropertyPath> traverse_paths(const DataSource& source);

/// Paths of non-container properties only, in traverse order.
std::vector<PropertyPath> leaf_paths(const DataSource& source);

/// Resolves path against a descriptor, producing the container route.
std::optional<std::vector<std::uint16_t>> resolve_route(const DescriptorPtr& root, const PropertyPath& path);

/// Reference implementation backed by a Value tree. Used by tests, tools
/// and anywhere a self-contained container is wanted.
class GenericSource : public DataSource {
public:
    struct Options {
        bool coerce = false;
        std::set<PropertyPath> read_only;
    };

    explicit GenericSource(DescriptorPtr descriptor);
    GenericSource(DescriptorPtr descriptor, Value value);
    GenericSource(DescriptorPtr descriptor, Value value, Options options);

    DescriptorPtr describe() const override { return descriptor_; }
    void traverse(const Visitor& visit) const override;
    bool coerces() const noexcept override { return options_.coerce; }
    bool writable(const FieldHandle& h) const noexcept override;

    const Value& value() const noexcept { return value_; }
    /// Replaces the whole datum; throws type_mismatch if it does not conform.
    void assign(Value value);
    void set_coercion(bool on) noexcept { options_.coerce = on; }
    void set_read_only(const PropertyPath& path) { options_.read_only.insert(path); }

protected:
    Value do_read(const FieldHandle& handle) const override;
    void do_write(const FieldHandle& handle, const Value& value) override;

private:
    DescriptorPtr descriptor_;
    Value value_;
    Options options_;
};

} // namespace pw
