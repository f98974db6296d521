// SPDX-License-Identifier: Apache-2.0
#include "pw/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>

#include "pw/detail/lock_audit.hpp"
#include "pw/error.hpp"

namespace pw::transport {

void Stream::write(std::span<const std::uint8_t> bytes) {
    do_write(bytes);
    ++writes_;
    bytes_out_ += bytes.size();
}

std::size_t Stream::read(std::span<std::uint8_t> buffer) {
    auto n = do_read(buffer);
    bytes_in_ += n;
    return n;
}

bool is_loopback_address(std::string_view address) noexcept { return address.starts_with("loop://"); }

namespace {

[[noreturn]] void fail(const std::string& what) { throw Error(ErrorCode::transport, what); }

// ---------------------------------------------------------------------------
// Loopback

struct Pipe {
    detail::TrackedMutex mu;
    std::condition_variable_any cv;
    std::deque<std::uint8_t> data;
    bool closed = false;

    void close() {
        {
            std::lock_guard lock(mu);
            closed = true;
        }
        cv.notify_all();
    }
};

struct Hub;

class LoopStream : public Stream {
public:
    LoopStream(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out, std::shared_ptr<std::atomic<bool>> partition,
               std::string peer)
        : in_(std::move(in)), out_(std::move(out)), partition_(std::move(partition)), peer_(std::move(peer)) {}
    ~LoopStream() override { close(); }

    void close() override {
        in_->close();
        out_->close();
    }
    std::string peer() const override { return peer_; }

protected:
    void do_write(std::span<const std::uint8_t> bytes) override {
        {
            std::lock_guard lock(out_->mu);
            if (out_->closed) fail("loopback stream closed");
            if (partition_->load()) return;
            out_->data.insert(out_->data.end(), bytes.begin(), bytes.end());
        }
        out_->cv.notify_all();
    }

    std::size_t do_read(std::span<std::uint8_t> buffer) override {
        std::unique_lock lock(in_->mu);
        in_->cv.wait(lock, [&] { return !in_->data.empty() || in_->closed; });
        if (in_->data.empty()) return 0;
        auto n = std::min(buffer.size(), in_->data.size());
        std::copy_n(in_->data.begin(), n, buffer.begin());
        in_->data.erase(in_->data.begin(), in_->data.begin() + static_cast<std::ptrdiff_t>(n));
        return n;
    }

private:
    std::shared_ptr<Pipe> in_, out_;
    std::shared_ptr<std::atomic<bool>> partition_;
    std::string peer_;
};

struct Hub {
    detail::TrackedMutex mu;
    std::condition_variable_any cv;
    std::deque<std::unique_ptr<Stream>> backlog;
    bool listening = false;
    std::shared_ptr<std::atomic<bool>> partition = std::make_shared<std::atomic<bool>>(false);
};

detail::TrackedMutex hubs_mu;
std::map<std::string, std::shared_ptr<Hub>, std::less<>> hubs;

std::shared_ptr<Hub> hub(std::string_view name) {
    std::lock_guard lock(hubs_mu);
    auto it = hubs.find(name);
    if (it == hubs.end()) it = hubs.emplace(std::string(name), std::make_shared<Hub>()).first;
    return it->second;
}

class LoopListener : public Listener {
public:
    LoopListener(std::string name, std::shared_ptr<Hub> h) : name_(std::move(name)), hub_(std::move(h)) {}
    ~LoopListener() override { close(); }

    std::unique_ptr<Stream> accept() override {
        std::unique_lock lock(hub_->mu);
        hub_->cv.wait(lock, [&] { return !hub_->backlog.empty() || !hub_->listening || closed_; });
        if (closed_ || hub_->backlog.empty()) return nullptr;
        auto s = std::move(hub_->backlog.front());
        hub_->backlog.pop_front();
        return s;
    }

    void close() override {
        {
            std::lock_guard lock(hub_->mu);
            if (closed_) return;
            closed_ = true;
            hub_->listening = false;
            for (auto& s : hub_->backlog) s->close();
            hub_->backlog.clear();
        }
        hub_->cv.notify_all();
    }

    std::string address() const override { return "loop://" + name_; }

private:
    std::string name_;
    std::shared_ptr<Hub> hub_;
    bool closed_ = false;
};

// ---------------------------------------------------------------------------
// TCP

struct HostPort {
    std::string host;
    std::string port;
};

HostPort split_address(std::string_view address) {
    if (address.starts_with("tcp://")) address.remove_prefix(6);
    auto colon = address.rfind(':');
    if (colon == std::string_view::npos) fail("address '" + std::string(address) + "' lacks a port");
    HostPort hp{std::string(address.substr(0, colon)), std::string(address.substr(colon + 1))};
    if (hp.host.starts_with('[') && hp.host.ends_with(']')) hp.host = hp.host.substr(1, hp.host.size() - 2);
    if (hp.host.empty()) hp.host = "0.0.0.0";
    if (hp.port.empty() || hp.port.find_first_not_of("0123456789") != std::string::npos)
        fail("bad port in address '" + std::string(address) + "'");
    return hp;
}

struct AddrInfo {
    addrinfo* list = nullptr;
    ~AddrInfo() {
        if (list) freeaddrinfo(list);
    }
};

void resolve(const HostPort& hp, bool passive, AddrInfo& out) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    int rc = getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &out.list);
    if (rc != 0) fail("cannot resolve '" + hp.host + "': " + gai_strerror(rc));
}

std::string describe(const sockaddr* sa) {
    char host[NI_MAXHOST], port[NI_MAXSERV];
    socklen_t len = sa->sa_family == AF_INET6 ? sizeof(sockaddr_in6) : sizeof(sockaddr_in);
    if (getnameinfo(sa, len, host, sizeof host, port, sizeof port, NI_NUMERICHOST | NI_NUMERICSERV) != 0)
        return "?";
    std::string h = host;
    if (sa->sa_family == AF_INET6) h = "[" + h + "]";
    return h + ":" + port;
}

class TcpStream : public Stream {
public:
    TcpStream(int fd, std::string peer) : fd_(fd), peer_(std::move(peer)) {
        int one = 1;
        setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
    ~TcpStream() override {
        close();
        ::close(fd_);
    }

    void close() override {
        bool expected = false;
        if (closed_.compare_exchange_strong(expected, true)) ::shutdown(fd_, SHUT_RDWR);
    }
    std::string peer() const override { return peer_; }

protected:
    void do_write(std::span<const std::uint8_t> bytes) override {
        std::size_t sent = 0;
        while (sent < bytes.size()) {
            auto n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                fail("send to " + peer_ + " failed: " + std::strerror(errno));
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    std::size_t do_read(std::span<std::uint8_t> buffer) override {
        while (true) {
            auto n = ::recv(fd_, buffer.data(), buffer.size(), 0);
            if (n >= 0) return static_cast<std::size_t>(n);
            if (errno == EINTR) continue;
            return 0;
        }
    }

private:
    int fd_;
    std::string peer_;
    std::atomic<bool> closed_{false};
};

class TcpListener : public Listener {
public:
    TcpListener(int fd, std::string address) : fd_(fd), address_(std::move(address)) {}
    ~TcpListener() override {
        close();
        ::close(fd_);
    }

    std::unique_ptr<Stream> accept() override {
        while (!closed_) {
            sockaddr_storage ss{};
            socklen_t len = sizeof ss;
            int c = ::accept4(fd_, reinterpret_cast<sockaddr*>(&ss), &len, SOCK_CLOEXEC);
            if (c >= 0) return std::make_unique<TcpStream>(c, describe(reinterpret_cast<sockaddr*>(&ss)));
            if (errno == EINTR || errno == ECONNABORTED) continue;
            break;
        }
        return nullptr;
    }

    void close() override {
        bool expected = false;
        if (closed_.compare_exchange_strong(expected, true)) ::shutdown(fd_, SHUT_RDWR);
    }

    std::string address() const override { return address_; }

private:
    int fd_;
    std::string address_;
    std::atomic<bool> closed_{false};
};

} // namespace

std::unique_ptr<Listener> listen(std::string_view address) {
    if (is_loopback_address(address)) {
        auto name = std::string(address.substr(7));
        if (name.empty()) fail("loopback address needs a name");
        auto h = hub(name);
        {
            std::lock_guard lock(h->mu);
            if (h->listening) fail("loopback address '" + name + "' is in use");
            h->listening = true;
        }
        return std::make_unique<LoopListener>(name, h);
    }
    auto hp = split_address(address);
    AddrInfo ai;
    resolve(hp, true, ai);
    std::string last_error = "no usable address";
    for (auto* p = ai.list; p; p = p->ai_next) {
        int fd = ::socket(p->ai_family, p->ai_socktype | SOCK_CLOEXEC, p->ai_protocol);
        if (fd < 0) continue;
        int one = 1;
        setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(fd, p->ai_addr, p->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
            sockaddr_storage ss{};
            socklen_t len = sizeof ss;
            getsockname(fd, reinterpret_cast<sockaddr*>(&ss), &len);
            return std::make_unique<TcpListener>(fd, describe(reinterpret_cast<sockaddr*>(&ss)));
        }
        last_error = std::strerror(errno);
        ::close(fd);
    }
    fail("cannot listen on '" + std::string(address) + "': " + last_error);
}

std::unique_ptr<Stream> connect(std::string_view address, std::chrono::milliseconds timeout) {
    if (is_loopback_address(address)) {
        auto name = address.substr(7);
        auto h = hub(name);
        auto a = std::make_shared<Pipe>(), b = std::make_shared<Pipe>();
        {
            std::lock_guard lock(h->mu);
            if (!h->listening) fail("connection to '" + std::string(address) + "' refused");
            h->backlog.push_back(std::make_unique<LoopStream>(a, b, h->partition, "loop-client"));
        }
        h->cv.notify_all();
        return std::make_unique<LoopStream>(b, a, h->partition, std::string(address));
    }
    auto hp = split_address(address);
    AddrInfo ai;
    resolve(hp, false, ai);
    std::string last_error = "no usable address";
    for (auto* p = ai.list; p; p = p->ai_next) {
        int fd = ::socket(p->ai_family, p->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, p->ai_protocol);
        if (fd < 0) continue;
        int rc = ::connect(fd, p->ai_addr, p->ai_addrlen);
        if (rc != 0 && errno == EINPROGRESS) {
            pollfd pfd{fd, POLLOUT, 0};
            rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
            if (rc == 0) {
                last_error = "timed out";
                ::close(fd);
                continue;
            }
            int err = 0;
            socklen_t len = sizeof err;
            getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
            rc = err == 0 ? 0 : -1;
            errno = err;
        }
        if (rc == 0) {
            int flags = fcntl(fd, F_GETFL);
            fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
            return std::make_unique<TcpStream>(fd, describe(p->ai_addr));
        }
        last_error = std::strerror(errno);
        ::close(fd);
    }
    fail("cannot connect to '" + std::string(address) + "': " + last_error);
}

namespace loopback {
void set_partitioned(std::string_view name, bool partitioned) { hub(name)->partition->store(partitioned); }
} // namespace loopback

} // namespace pw::transport
