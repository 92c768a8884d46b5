// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

// Fixed-size fan-out of independent work items. MCLNF_THREADS caps the
// number of workers.

#include <cstddef>
#include <functional>

namespace mclnf {

// min(MCLNF_THREADS if set, hardware threads), at least 1.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Items are claimed dynamically; results must
// be written to per-item slots so the outcome is independent of scheduling.
// The first exception thrown by any item is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);
// Same with an explicit worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t max_workers);

} // namespace mclnf
