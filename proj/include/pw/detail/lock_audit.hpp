// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <shared_mutex>
#include <utility>

namespace pw {

/// Counters kept by the lock instrumentation. Every library mutex is a
/// TrackedMutex, and every user callback goes through invoke_user(), which
/// records a violation when the calling thread holds any library lock.
struct LockAudit {
    static std::uint64_t callbacks() noexcept;
    static std::uint64_t violations() noexcept;
    static int held_by_this_thread() noexcept;
};

namespace detail {

int& held_locks() noexcept;
void note_callback() noexcept;

template <class M>
class Tracked {
public:
    void lock() {
        inner_.lock();
        ++held_locks();
    }
    bool try_lock() {
        if (!inner_.try_lock()) return false;
        ++held_locks();
        return true;
    }
    void unlock() {
        --held_locks();
        inner_.unlock();
    }

    void lock_shared()
        requires requires(M m) { m.lock_shared(); }
    {
        inner_.lock_shared();
        ++held_locks();
    }
    bool try_lock_shared()
        requires requires(M m) { m.try_lock_shared(); }
    {
        if (!inner_.try_lock_shared()) return false;
        ++held_locks();
        return true;
    }
    void unlock_shared()
        requires requires(M m) { m.unlock_shared(); }
    {
        --held_locks();
        inner_.unlock_shared();
    }

private:
    M inner_;
};

using TrackedMutex = Tracked<std::mutex>;
using TrackedSharedMutex = Tracked<std::shared_mutex>;

/// Runs a user-supplied callable, checking that no library lock is held.
template <class F, class... Args>
decltype(auto) invoke_user(F&& f, Args&&... args) {
    note_callback();
    return std::forward<F>(f)(std::forward<Args>(args)...);
}

} // namespace detail
} // namespace pw
