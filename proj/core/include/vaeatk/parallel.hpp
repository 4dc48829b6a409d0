#pragma once

#include <cstdint>
#include <functional>

namespace vaeatk {

// Runs fn(i) for i in [0, n), possibly on several threads. Items must be
// independent and write to disjoint locations; per-item work must be
// deterministic so results do not depend on the schedule. Nested calls run
// serially on the calling thread. workers <= 0 picks a default.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn, int workers = 0);

int default_workers();

}  // namespace vaeatk
