#pragma once

#include <cstddef>
#include <functional>

namespace hypkit {

// Caps the workers used by parallel_for; 0 restores the default of one per
// hardware thread.
void set_thread_limit(std::size_t n);
std::size_t thread_limit();

// Runs fn(0..count-1) on up to thread_limit() threads. Each index must touch
// only its own outputs, so results do not depend on the thread count. The
// first exception thrown by any index is rethrown after all workers finish.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace hypkit
