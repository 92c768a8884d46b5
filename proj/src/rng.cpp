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

#include "mclnf/rng.hpp"

#include <cmath>
#include <numbers>

namespace mclnf {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream)
{
    return mix64(mix64(seed ^ 0xD1B54A32D192ED03ULL) + kGolden * (stream + 1));
}

} // namespace

std::uint64_t mix64(std::uint64_t x)
{
    // splitmix64 finalizer
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), key_(derive_key(seed, stream))
{
}

Rng Rng::restore(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter)
{
    Rng r(seed, stream);
    r.counter_ = counter;
    return r;
}

Rng Rng::split(std::uint64_t stream) const
{
    return Rng(key_, stream);
}

std::uint64_t Rng::next_u64()
{
    const std::uint64_t c = counter_++;
    return mix64(key_ ^ mix64(c * kGolden + 0x632BE59BD9B4E019ULL));
}

double Rng::uniform()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi)
{
    return lo + (hi - lo) * uniform();
}

double Rng::normal()
{
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n)
{
    // rejection keeps the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) {
        x = next_u64();
    }
    return x % n;
}

} // namespace mclnf
