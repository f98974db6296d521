// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace pw::transport {

struct StreamStats {
    std::uint64_t writes = 0;
    std::uint64_t bytes_out = 0;
    std::uint64_t bytes_in = 0;
};

/// Bidirectional byte stream. write() may be called from several threads
/// if the caller serializes them; read() from one thread at a time.
class Stream {
public:
    virtual ~Stream() = default;

    /// Writes every byte or throws Error(transport).
    void write(std::span<const std::uint8_t> bytes);
    /// Blocks for at least one byte. Returns 0 once the stream is closed.
    std::size_t read(std::span<std::uint8_t> buffer);
    /// Unblocks pending reads on both ends. Idempotent.
    virtual void close() = 0;
    virtual std::string peer() const = 0;

    StreamStats stats() const noexcept { return {writes_.load(), bytes_out_.load(), bytes_in_.load()}; }

protected:
    virtual void do_write(std::span<const std::uint8_t> bytes) = 0;
    virtual std::size_t do_read(std::span<std::uint8_t> buffer) = 0;

private:
    std::atomic<std::uint64_t> writes_{0}, bytes_out_{0}, bytes_in_{0};
};

class Listener {
public:
    virtual ~Listener() = default;
    /// Blocks for the next connection; null once closed.
    virtual std::unique_ptr<Stream> accept() = 0;
    virtual void close() = 0;
    /// Bound address in connectable form, e.g. `127.0.0.1:40123` or `loop://name`.
    virtual std::string address() const = 0;
};

/// `host:port`, `tcp://host:port` or `loop://name`. Port 0 picks a free port.
/// Throws Error(transport) when binding fails.
std::unique_ptr<Listener> listen(std::string_view address);

/// Throws Error(transport) on refusal, timeout or a bad address.
std::unique_ptr<Stream> connect(std::string_view address, std::chrono::milliseconds timeout);

bool is_loopback_address(std::string_view address) noexcept;

/// In-process transport controls. A partitioned hub silently drops every
/// byte written on its existing and future connections.
namespace loopback {
void set_partitioned(std::string_view name, bool partitioned);
}

} // namespace pw::transport
