// SPDX-License-Identifier: Apache-2.0
#include "pw/detail/lock_audit.hpp"

namespace pw {
namespace {

std::atomic<std::uint64_t> g_callbacks{0};
std::atomic<std::uint64_t> g_violations{0};

} // namespace

std::uint64_t LockAudit::callbacks() noexcept { return g_callbacks.load(); }
std::uint64_t LockAudit::violations() noexcept { return g_violations.load(); }
int LockAudit::held_by_this_thread() noexcept { return detail::held_locks(); }

namespace detail {

int& held_locks() noexcept {
    thread_local int count = 0;
    return count;
}

void note_callback() noexcept {
    g_callbacks.fetch_add(1, std::memory_order_relaxed);
    if (held_locks() != 0) g_violations.fetch_add(1, std::memory_order_relaxed);
}

} // namespace detail
} // namespace pw
