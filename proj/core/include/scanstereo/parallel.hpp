// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#pragma once

#include <cstddef>
#include <functional>

namespace scanstereo {

/// Process-wide worker count used by every parallel section. 0 selects
/// std::thread::hardware_concurrency().
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs body(begin, end) over a static partition of [0, count). Each index
/// is visited exactly once and the partition never changes the arithmetic
/// performed per index, so results do not depend on the thread count.
/// Ranges smaller than `min_chunk` per worker run inline.
void parallel_for(std::size_t count,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 1);

}  // namespace scanstereo
