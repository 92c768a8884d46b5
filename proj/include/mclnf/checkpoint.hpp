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

// Binary checkpoint of a meta-training run. All integers and doubles are
// little-endian; a trailing FNV-1a checksum guards the payload.

#include "mclnf/meta.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mclnf {

struct Checkpoint {
    static constexpr char magic[9] = "MCLNFCKP";
    static constexpr std::uint32_t version = 1;

    FieldArch arch;
    Tensor theta;
    // Momentum buffer; empty when unused.
    Tensor velocity;
    // Adapted modules with their regions; empty for a plain meta init.
    std::vector<Box> regions;
    std::vector<Tensor> modules;
    std::uint64_t outer_step = 0;
    std::uint64_t rng_seed = 0;
    std::uint64_t rng_stream = 0;
    std::uint64_t rng_counter = 0;
    std::uint64_t config_hash = 0;

    [[nodiscard]] Rng rng() const { return Rng::restore(rng_seed, rng_stream, rng_counter); }
};

Checkpoint make_checkpoint(const MetaState& state, const Rng& rng, std::uint64_t config_hash);
// Copies theta, velocity and outer_step into `state`; the arch must match.
void restore_state(const Checkpoint& ck, MetaState& state);
// Throws ConfigError on a hash mismatch unless `force`.
void check_resume(const Checkpoint& ck, std::uint64_t config_hash, bool force);

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

} // namespace mclnf
