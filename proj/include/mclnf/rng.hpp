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

#include <cstdint>

namespace mclnf {

// Counter-based generator: draw n of (seed, stream) is a pure function of
// (seed, stream, n), so sequences are identical on every platform and a
// generator can be split per task without sharing state.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] std::uint64_t stream() const { return stream_; }
    [[nodiscard]] std::uint64_t counter() const { return counter_; }

    static Rng restore(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

    // Child generator keyed on this generator's key and `stream`. Does not
    // advance this generator.
    [[nodiscard]] Rng split(std::uint64_t stream) const;

    std::uint64_t next_u64();
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    // Standard normal (Box-Muller, one draw per call).
    double normal();
    // Uniform integer in [0, n); n > 0.
    std::uint64_t below(std::uint64_t n);

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

} // namespace mclnf
