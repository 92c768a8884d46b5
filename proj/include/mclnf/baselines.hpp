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

// Reference continual-learning strategies, all run through the same
// sequential adaptation loop as the modular method.

#include "mclnf/meta.hpp"

#include <string>
#include <vector>

namespace mclnf {

enum class Strategy { OL, CL, ER, EWC, MamlCl, OML, OursMod, OursMim };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);
std::vector<Strategy> all_strategies();
// Strategies that start from a meta-learned initialization.
bool is_meta_strategy(Strategy s);

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

    void set_capacity(std::size_t capacity) { capacity_ = capacity; }
    [[nodiscard]] std::size_t capacity() const { return capacity_; }
    [[nodiscard]] std::size_t size() const { return rows_.size(); }
    [[nodiscard]] bool empty() const { return rows_.empty(); }
    [[nodiscard]] std::size_t seen() const { return seen_; }

    // Reservoir sampling over everything offered so far.
    void offer(const Samples& pool, std::size_t row, std::size_t task, Rng& rng);
    // n stored samples drawn uniformly without replacement.
    [[nodiscard]] Samples draw(std::size_t n, Rng& rng) const;
    [[nodiscard]] const std::vector<std::size_t>& signal_indices() const { return ids_; }
    [[nodiscard]] const std::vector<std::size_t>& tasks() const { return tags_; }

private:
    struct Row {
        std::vector<double> coords;
        std::vector<double> targets;
    };
    std::size_t capacity_;
    std::size_t seen_ = 0;
    std::vector<Row> rows_;
    std::vector<std::size_t> ids_;
    std::vector<std::size_t> tags_;
};

// ceil(ratio * m) replayed samples plus m minus that many drawn from the
// current batch. An empty buffer returns the current batch unchanged.
Samples replay_mix(const ReplayBuffer& buffer, const Samples& current, double ratio, Rng& rng);

struct EwcAnchor {
    Tensor theta;
    Tensor fisher;
};

// sum over anchors of lambda/2 * sum_p F_p (theta_p - theta*_p)^2
double ewc_penalty(const Tensor& theta, const std::vector<EwcAnchor>& anchors, double lambda);
ad::Var ewc_penalty(ad::Tape& tape, ad::Var theta, const std::vector<EwcAnchor>& anchors, double lambda);

// 1 on the parameters of the listed layers (0-based), 0 elsewhere.
Tensor oml_inner_mask(const FieldArch& arch, const std::vector<std::size_t>& layers);

struct StrategyConfig {
    Strategy strategy = Strategy::OursMod;
    double eta = 1e-2;
    // Used as-is by OURS-MIM; every other strategy runs with lambda = 0.
    FimConfig fim;
    std::size_t batch_size = 0;
    double replay_ratio = 0.5;
    // 0 means a quarter of the first task's samples.
    std::size_t replay_capacity = 0;
    double ewc_lambda = 1.0;
    // Layers the OML inner loop may move; empty means the last layer.
    std::vector<std::size_t> oml_layers;
    // Module count for the modular strategies; 0 = one per task.
    std::size_t n_modules = 0;
    std::uint64_t seed = 0;
    bool keep_reconstructions = false;
};

// Effective FIM settings for a strategy.
FimConfig strategy_fim(const StrategyConfig& cfg);
Tensor strategy_mask(const StrategyConfig& cfg, const FieldArch& arch);
// 1 for the single-network strategies, `modular` for the modular ones.
std::size_t strategy_modules(Strategy s, std::size_t modular = 0);

// Meta-training settings for a meta strategy derived from a base state.
MetaState meta_state_for(const StrategyConfig& cfg, const MetaState& base);

// The whole signal as one task.
Episode whole_signal(const Episode& episode);

SequenceSpec strategy_spec(const StrategyConfig& cfg, const FieldArch& arch, const Tensor& init);

// Runs the strategy over the episode (OL sees the whole signal at once).
// `init` is a random init for OL/CL/ER/EWC and the meta-learned one for
// the others.
SequenceReport run_strategy(const StrategyConfig& cfg, const Episode& episode, const FieldArch& arch,
                            const Tensor& init, const std::vector<std::size_t>& steps, const Rng& rng,
                            TaskSource* source = nullptr);

} // namespace mclnf
