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

// Episode-based meta-training of a shared initialization over continual
// task sequences, and sequential test-time adaptation from it.

#include "mclnf/fim.hpp"
#include "mclnf/metrics.hpp"
#include "mclnf/modular.hpp"
#include "mclnf/task.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mclnf {

enum class MetaMode { SecondOrder, FirstOrder };

// Access to an episode's data during sequential adaptation. Adaptation of
// task i may only read context(i); queries are read once adaptation ends.
class TaskSource {
public:
    virtual ~TaskSource() = default;
    [[nodiscard]] virtual std::size_t size() const = 0;
    [[nodiscard]] virtual SplitKind split() const = 0;
    [[nodiscard]] virtual const Box& region(std::size_t i) const = 0;
    // Starts a fresh pass over the sequence.
    virtual void begin_pass() = 0;
    virtual void begin_task(std::size_t i) = 0;
    virtual const Samples& context(std::size_t i) = 0;
    virtual void end_adaptation() = 0;
    virtual const Samples& query(std::size_t i) = 0;
};

// Serves an Episode; reading another task's context while adapting throws.
class EpisodeSource : public TaskSource {
public:
    explicit EpisodeSource(const Episode& episode) : ep_(episode) {}

    [[nodiscard]] std::size_t size() const override { return ep_.size(); }
    [[nodiscard]] SplitKind split() const override { return ep_.split; }
    [[nodiscard]] const Box& region(std::size_t i) const override { return ep_.tasks.at(i).region; }
    void begin_pass() override;
    void begin_task(std::size_t i) override;
    const Samples& context(std::size_t i) override;
    void end_adaptation() override;
    const Samples& query(std::size_t i) override;

private:
    const Episode& ep_;
    std::size_t current_ = 0;
    bool adapting_ = false;
    bool started_ = false;
};

RegionMap region_map(const TaskSource& source, std::size_t n_modules);

// Strategy-specific additions to each inner step.
class StepHooks {
public:
    virtual ~StepHooks() = default;
    virtual void begin_task(std::size_t /*task*/, const Samples& /*context*/) {}
    virtual void end_task(std::size_t /*task*/, const FieldArch& /*arch*/, const Tensor& /*theta*/,
                          const Samples& /*context*/)
    {
    }
    // Replaces the step's batch by writing `out` and returning true.
    virtual bool mix(const Samples& /*batch*/, Rng& /*rng*/, Samples& /*out*/) { return false; }
    // Extra differentiable loss term.
    virtual std::optional<ad::Var> penalty(ad::Tape& /*tape*/, ad::Var /*theta*/) { return std::nullopt; }
    virtual void after_step(const Samples& /*batch*/, Rng& /*rng*/) {}
};

struct AdaptOptions {
    double eta = 1e-2;
    FimConfig fim;
    // 1 where the inner loop may move a parameter; empty means everywhere.
    Tensor mask;
    // Samples per step; 0 uses the whole context every step.
    std::size_t batch_size = 0;
};

// Accumulator sized for the configured score scope, F = eps.
FisherAccumulator make_fisher(const FieldArch& arch, const FimConfig& cfg);

struct StepResult {
    double loss;
    double mean_weight;
};

// One inner step on `batch`: weights from the current Fisher, gradient of
// the weighted loss (plus any hook penalty), masked (preconditioned) SGD
// update, then one Fisher update per sample.
StepResult inner_step(const FieldArch& arch, Tensor& theta, const Samples& batch, const AdaptOptions& opts,
                      FisherAccumulator& fisher, StepHooks* hooks = nullptr);

struct TaskTrace {
    std::vector<double> losses;
    double mean_weight = 1.0;
};

// `steps` inner steps on one context set.
TaskTrace adapt_task(const FieldArch& arch, Tensor& theta, const Samples& context, std::size_t steps,
                     const AdaptOptions& opts, FisherAccumulator& fisher, Rng& rng, StepHooks* hooks = nullptr);

struct MetaState {
    SharedInit shared;
    std::size_t outer_step = 0;
    double eta_inner = 1e-2;
    double eta_outer = 1e-3;
    double momentum = 0.0;
    Tensor velocity;
    std::size_t inner_steps = 16;
    FimConfig fim;
    MetaMode mode = MetaMode::FirstOrder;
    std::size_t n_modules = 0;
    Tensor mask;
    std::size_t batch_size = 0;

    void validate() const;
    [[nodiscard]] AdaptOptions adapt_options() const;
};

struct EpisodeResult {
    ModularField adapted;
    RegionMap map;
    std::vector<std::vector<double>> task_losses;
    std::vector<double> mean_weights;
    double outer_loss = 0.0;
    // d(outer loss)/d(shared init), or its first-order approximation.
    Tensor meta_gradient;
    bool aborted = false;
    std::string error;
};

// Adapts the tasks in order from the shared init, then scores every
// task's query at the final parameters. With `gradient` set the
// meta-gradient is computed in the state's mode.
EpisodeResult run_episode(const MetaState& state, TaskSource& source, Rng& rng, bool gradient = true);
EpisodeResult run_episode(const MetaState& state, const Episode& episode, Rng& rng, bool gradient = true);

struct OuterUpdate {
    bool applied = false;
    double outer_loss = 0.0;
    std::size_t aborted = 0;
};

// shared <- shared - eta_outer * mean meta-gradient (with optional
// momentum). Aborted episodes are left out; nothing moves if none remain
// or the mean gradient is not finite.
OuterUpdate outer_update(MetaState& state, const std::vector<EpisodeResult>& results);

struct SplitSpec {
    SplitKind kind = SplitKind::Spatial;
    std::size_t tasks = 4;
    std::size_t axis = 1;
};

Episode make_episode(const Signal& signal, const SplitSpec& spec);

struct MetaTrainConfig {
    std::size_t outer_steps = 5000;
    std::size_t meta_batch = 4;
    SplitSpec split;
    // Context samples per task; 0 keeps every region sample in both sets.
    std::size_t context_size = 0;
    QueryMode query_mode = QueryMode::HeldOut;
};

struct TrainLogRow {
    std::size_t outer_step;
    double outer_loss;
    double wall_ms;
};

// Runs outer steps until state.outer_step reaches cfg.outer_steps. Episode
// randomness is derived from (rng, outer step, slot), so a resumed run
// continues exactly. `on_step` sees the state after each update.
std::vector<TrainLogRow> meta_train(MetaState& state, const std::vector<Signal>& signals,
                                    const MetaTrainConfig& cfg, const Rng& rng,
                                    const std::function<void(const MetaState&, const TrainLogRow&)>& on_step = {});

// Sequential adaptation of an episode from a given init, evaluated at a
// schedule of per-task step counts.
struct SequenceSpec {
    std::string name;
    FieldArch arch;
    Tensor init;
    AdaptOptions adapt;
    // 0 = one module per task, 1 = a single shared network.
    std::size_t n_modules = 0;
    std::function<std::unique_ptr<StepHooks>()> make_hooks;
    bool keep_reconstructions = false;
};

struct SequenceReport {
    MetricTable table;
    // forgetting[r][i][j]: PSNR on task j right after task i, schedule row r.
    std::vector<std::vector<std::vector<double>>> forgetting;
    // modules[r][i]: every module's parameters right after task i.
    std::vector<std::vector<std::vector<Tensor>>> modules;
    // Full-signal predictions per schedule row, in sample order.
    std::vector<Tensor> reconstructions;
};

// Schedule entries must strictly increase; each entry reruns the whole
// sequence with that many steps per task. Step 0 evaluates the init.
SequenceReport run_sequence(const SequenceSpec& spec, const Episode& episode, const std::vector<std::size_t>& steps,
                            const Rng& rng, TaskSource* source = nullptr);

// Test-time adaptation from the meta-learned init; no outer update.
MetricTable meta_test_adapt(const MetaState& state, const Episode& episode, const std::vector<std::size_t>& steps,
                            const Rng& rng, const std::string& name = "OURS");

SequenceSpec sequence_from_state(const MetaState& state, std::string name);

// 1, 2, 4, ..., 4096
std::vector<std::size_t> default_schedule();

} // namespace mclnf
