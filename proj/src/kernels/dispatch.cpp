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

#include "mclnf/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace mclnf::kernels {

namespace {

std::atomic<const KernelTable*>& slot()
{
    static std::atomic<const KernelTable*> table{nullptr};
    return table;
}

const KernelTable* by_name(std::string_view name)
{
    if (name == "scalar") {
        return &scalar_table();
    }
    if (name == "avx2") {
        return cpu_has_avx2() ? avx2_table() : nullptr;
    }
    if (name == "auto") {
        const KernelTable* fast = cpu_has_avx2() ? avx2_table() : nullptr;
        return fast ? fast : &scalar_table();
    }
    return nullptr;
}

} // namespace

bool cpu_has_avx2()
{
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable& active()
{
    const KernelTable* t = slot().load(std::memory_order_acquire);
    if (!t) {
        const char* env = std::getenv("MCLNF_KERNELS");
        t = by_name(env ? env : "auto");
        if (!t) {
            t = by_name("auto");
        }
        slot().store(t, std::memory_order_release);
    }
    return *t;
}

bool select(std::string_view name)
{
    const KernelTable* t = by_name(name);
    if (!t) {
        return false;
    }
    slot().store(t, std::memory_order_release);
    return true;
}

} // namespace mclnf::kernels
