#pragma once

#include <cstdint>
#include <functional>

namespace af {

/// Worker count used by parallel_for. Defaults to the hardware thread count,
/// overridable via the AF_THREADS environment variable or set_num_threads().
int num_threads();
void set_num_threads(int n);

/// Splits [0, n) into contiguous chunks and runs fn(begin, end) on each.
/// Every index is handled by exactly one worker and each output element is
/// written by a single thread in a fixed order, so results are bit-identical
/// for any worker count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace af
