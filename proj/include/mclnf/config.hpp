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

// Flat key = value run configuration checked against a fixed schema.

#include "mclnf/baselines.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mclnf {

enum class KeyType { Uint, Double, Bool, String, Choice, UintList };

struct KeySpec {
    std::string key;
    KeyType type;
    std::string default_value;
    std::string help;
    // Allowed values for Choice keys.
    std::vector<std::string> choices;
    // Left out of the config hash (does not change what is trained).
    bool hash_exempt = false;
};

// The published schema, in documentation order.
const std::vector<KeySpec>& config_schema();
const KeySpec* find_key(const std::string& key);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes);
std::uint64_t fnv1a64(const std::string& text);

class Config {
public:
    // Every key at its default.
    Config();

    static Config parse(std::istream& in, const std::string& origin = "<config>");
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    // Validates the key and the value; throws ConfigError.
    void set(const std::string& key, const std::string& value);
    [[nodiscard]] const std::string& raw(const std::string& key) const;
    [[nodiscard]] bool is_default(const std::string& key) const;

    [[nodiscard]] std::uint64_t get_uint(const std::string& key) const;
    [[nodiscard]] double get_double(const std::string& key) const;
    [[nodiscard]] bool get_bool(const std::string& key) const;
    [[nodiscard]] const std::string& get_string(const std::string& key) const;
    [[nodiscard]] std::vector<std::size_t> get_list(const std::string& key) const;

    // Sorted key=value lines including defaults.
    [[nodiscard]] std::string canonical(bool hashed_only = false) const;
    [[nodiscard]] std::uint64_t hash() const;

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, bool> explicit_;
};

FieldArch arch_from(const Config& c);
FimConfig fim_from(const Config& c);
SplitSpec split_from(const Config& c);
MetaTrainConfig train_from(const Config& c);
// Fresh state with a random init drawn from `seed`, before any
// strategy-specific changes.
MetaState meta_base_from(const Config& c);
// meta_base_from adjusted for the configured (meta) strategy.
MetaState meta_state_from(const Config& c);
StrategyConfig strategy_from(const Config& c, Strategy s);
std::vector<Strategy> strategies_from(const Config& c);
std::vector<std::size_t> eval_steps_from(const Config& c);
Family family_from(const Config& c);

// Sub-streams of the root seed.
namespace streams {
inline constexpr std::uint64_t init = 0x1417;
inline constexpr std::uint64_t train = 0x7a1;
inline constexpr std::uint64_t test = 0x7e57;
inline constexpr std::uint64_t meta = 0x3e7a;
inline constexpr std::uint64_t adapt = 0xada;
} // namespace streams

// data.path if set, else the synthetic family.
std::vector<Signal> train_signals_from(const Config& c);
std::vector<Signal> test_signals_from(const Config& c);
// "synthetic:<family>[:<index>[:<size>]]" (index into the held-out set)
// or a signal file / frame directory.
Signal signal_from_spec(const std::string& spec, const Config& c);
// Throws ConfigError when the signal does not fit the architecture.
void check_signal_arch(const Signal& signal, const FieldArch& arch);
// Splits per config; 1-D synthetic signals count as audio for temporal splits.
Episode episode_from(const Config& c, Signal signal);
Tensor random_init_from(const Config& c, const FieldArch& arch);

// Writes the schema as a commented default config.
void write_schema(std::ostream& out);

} // namespace mclnf
