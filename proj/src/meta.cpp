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

#include "mclnf/meta.hpp"

#include "mclnf/errors.hpp"
#include "mclnf/kernels.hpp"
#include "mclnf/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace mclnf {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0)
{
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::size_t fisher_offset(const FieldArch& arch, const FimConfig& cfg)
{
    return score_range(arch, cfg.scope).first;
}

Tensor step_weights(const FieldArch& arch, const Tensor& theta, const Samples& batch, const FimConfig& cfg,
                    const FisherAccumulator& fisher, Tensor& score_rows)
{
    if (cfg.needs_scores()) {
        score_rows = scores(arch, theta, batch.coords, batch.targets, cfg.scope);
    }
    if (cfg.lambda > 0.0) {
        return fim_weights(fisher, score_rows, cfg);
    }
    return Tensor(Shape{batch.size()}, 1.0);
}

void absorb_scores(FisherAccumulator& fisher, const Tensor& score_rows)
{
    if (score_rows.empty()) {
        return;
    }
    const std::size_t n = score_rows.cols();
    for (std::size_t j = 0; j < score_rows.rows(); ++j) {
        fisher.update(std::span<const double>(score_rows.ptr() + j * n, n));
    }
}

double mean_of(const Tensor& t)
{
    double s = 0.0;
    for (double v : t.data()) {
        s += v;
    }
    return t.empty() ? 0.0 : s / static_cast<double>(t.size());
}

// Picks the step's batch: the whole context or a fresh random subset.
const Samples& draw_batch(const Samples& context, std::size_t batch_size, Rng& rng, Samples& scratch)
{
    if (batch_size == 0 || batch_size >= context.size()) {
        return context;
    }
    std::vector<std::size_t> order(context.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    for (std::size_t i = 0; i < batch_size; ++i) {
        std::swap(order[i], order[i + rng.below(order.size() - i)]);
    }
    order.resize(batch_size);
    std::sort(order.begin(), order.end());
    scratch = gather(context, order);
    return scratch;
}

} // namespace

void EpisodeSource::begin_pass()
{
    adapting_ = true;
    current_ = 0;
    started_ = false;
}

void EpisodeSource::begin_task(std::size_t i)
{
    require(adapting_, "begin_task outside an adaptation pass");
    require(i == (started_ ? current_ + 1 : 0), "tasks must be adapted in order");
    require(i < ep_.size(), "task index out of range");
    current_ = i;
    started_ = true;
}

const Samples& EpisodeSource::context(std::size_t i)
{
    if (!adapting_ || !started_ || i != current_) {
        throw ContractError("context of task " + std::to_string(i) + " requested while adapting task " +
                            std::to_string(current_));
    }
    return ep_.tasks[i].context;
}

void EpisodeSource::end_adaptation()
{
    adapting_ = false;
}

const Samples& EpisodeSource::query(std::size_t i)
{
    require(!adapting_, "queries are only available after adaptation");
    return ep_.tasks.at(i).query;
}

RegionMap region_map(const TaskSource& source, std::size_t n_modules)
{
    std::vector<Box> regions;
    for (std::size_t i = 0; i < source.size(); ++i) {
        regions.push_back(source.region(i));
    }
    return region_map(source.split(), regions, n_modules);
}

FisherAccumulator make_fisher(const FieldArch& arch, const FimConfig& cfg)
{
    const auto [begin, end] = score_range(arch, cfg.scope);
    return FisherAccumulator(end - begin, cfg.rho, cfg.eps);
}

StepResult inner_step(const FieldArch& arch, Tensor& theta, const Samples& batch, const AdaptOptions& opts,
                      FisherAccumulator& fisher, StepHooks* hooks)
{
    require(!batch.empty(), "inner step on an empty batch");
    Tensor score_rows;
    const Tensor w = step_weights(arch, theta, batch, opts.fim, fisher, score_rows);

    ad::Tape tape;
    const ad::Var p = tape.leaf(theta);
    ad::Var loss = weighted_loss(tape, forward(tape, arch, p, batch.coords), batch.targets, w);
    const double data_loss = tape.value(loss).item();
    if (hooks) {
        if (auto extra = hooks->penalty(tape, p)) {
            loss = tape.add(loss, *extra);
        }
    }
    Tensor grad = tape.gradient(loss, p);
    if (!opts.mask.empty()) {
        kernels::active().mul(grad.size(), grad.ptr(), opts.mask.ptr(), grad.ptr());
    }
    fim_sgd_step(theta, grad, fisher, opts.fim, opts.eta, fisher_offset(arch, opts.fim));
    absorb_scores(fisher, score_rows);
    return {data_loss, mean_of(w)};
}

TaskTrace adapt_task(const FieldArch& arch, Tensor& theta, const Samples& context, std::size_t steps,
                     const AdaptOptions& opts, FisherAccumulator& fisher, Rng& rng, StepHooks* hooks)
{
    require(opts.mask.empty() || opts.mask.size() == theta.size(), "mask size differs from the parameter count");
    TaskTrace trace;
    double wsum = 0.0;
    Samples scratch;
    Samples mixed;
    for (std::size_t s = 0; s < steps; ++s) {
        const Samples* batch = &draw_batch(context, opts.batch_size, rng, scratch);
        if (hooks && hooks->mix(*batch, rng, mixed)) {
            batch = &mixed;
        }
        const StepResult r = inner_step(arch, theta, *batch, opts, fisher, hooks);
        if (hooks) {
            hooks->after_step(*batch, rng);
        }
        trace.losses.push_back(r.loss);
        wsum += r.mean_weight;
    }
    trace.mean_weight = steps ? wsum / static_cast<double>(steps) : 1.0;
    return trace;
}

void MetaState::validate() const
{
    shared.validate();
    fim.validate();
    if (!(eta_inner > 0.0) || !(eta_outer > 0.0)) {
        throw ConfigError("learning rates must be > 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
    if (!mask.empty() && mask.size() != shared.theta.size()) {
        throw DimensionError("inner-loop mask size differs from the parameter count");
    }
}

AdaptOptions MetaState::adapt_options() const
{
    return AdaptOptions{eta_inner, fim, mask, batch_size};
}

namespace {

struct OuterTerm {
    std::size_t task;
    const Samples* query;
};

std::vector<OuterTerm> outer_terms(TaskSource& source)
{
    std::vector<OuterTerm> terms;
    for (std::size_t i = 0; i < source.size(); ++i) {
        const Samples& q = source.query(i);
        if (!q.empty()) {
            terms.push_back({i, &q});
        }
    }
    require(!terms.empty(), "every task has an empty query set");
    return terms;
}

Tensor outer_weights(const FieldArch& arch, const Tensor& theta, const Samples& q, const FimConfig& cfg,
                     const FisherAccumulator& fisher)
{
    if (cfg.outer_weights && cfg.lambda > 0.0) {
        return fim_weights(fisher, scores(arch, theta, q.coords, q.targets, cfg.scope), cfg);
    }
    return Tensor(Shape{q.size()}, 1.0);
}

void first_order_episode(const MetaState& state, TaskSource& source, Rng& rng, bool gradient, EpisodeResult& res)
{
    const FieldArch& arch = state.shared.arch;
    const AdaptOptions opts = state.adapt_options();
    std::vector<FisherAccumulator> fishers;
    FisherAccumulator fisher = make_fisher(arch, state.fim);
    source.begin_pass();
    for (std::size_t i = 0; i < source.size(); ++i) {
        source.begin_task(i);
        const Samples& ctx = source.context(i);
        if (!state.fim.carry_fisher) {
            fisher = make_fisher(arch, state.fim);
        }
        Tensor& theta = res.adapted.module(res.map.task_module[i]);
        TaskTrace tr = adapt_task(arch, theta, ctx, state.inner_steps, opts, fisher, rng);
        res.task_losses.push_back(std::move(tr.losses));
        res.mean_weights.push_back(tr.mean_weight);
        fishers.push_back(fisher);
    }
    source.end_adaptation();

    const auto terms = outer_terms(source);
    const double inv = 1.0 / static_cast<double>(terms.size());
    if (gradient) {
        res.meta_gradient = Tensor(Shape{state.shared.theta.size()}, 0.0);
    }
    for (const auto& term : terms) {
        const Tensor& theta = res.adapted.module(res.map.task_module[term.task]);
        const Tensor w = outer_weights(arch, theta, *term.query, state.fim, fishers[term.task]);
        ad::Tape tape;
        const ad::Var p = tape.leaf(theta);
        const ad::Var loss = weighted_loss(tape, forward(tape, arch, p, term.query->coords), term.query->targets, w);
        res.outer_loss += inv * tape.value(loss).item();
        if (gradient) {
            const Tensor g = tape.gradient(loss, p);
            kernels::active().axpy(g.size(), inv, g.ptr(), res.meta_gradient.ptr());
        }
    }
}

void second_order_episode(const MetaState& state, TaskSource& source, Rng& rng, EpisodeResult& res)
{
    const FieldArch& arch = state.shared.arch;
    const FimConfig& cfg = state.fim;
    const std::size_t n = state.shared.theta.size();
    ad::Tape tape;
    const ad::Var leaf = tape.leaf(state.shared.theta);
    std::vector<ad::Var> module_var(res.map.boxes.size(), leaf);
    std::optional<ad::Var> mask_var;
    if (!state.mask.empty()) {
        mask_var = tape.constant(state.mask);
    }
    std::vector<FisherAccumulator> fishers;
    FisherAccumulator fisher = make_fisher(arch, cfg);
    Samples scratch;
    source.begin_pass();
    for (std::size_t i = 0; i < source.size(); ++i) {
        source.begin_task(i);
        const Samples& ctx = source.context(i);
        if (!cfg.carry_fisher) {
            fisher = make_fisher(arch, cfg);
        }
        ad::Var& v = module_var[res.map.task_module[i]];
        std::vector<double> losses;
        double wsum = 0.0;
        for (std::size_t s = 0; s < state.inner_steps; ++s) {
            const Samples& batch = draw_batch(ctx, state.batch_size, rng, scratch);
            Tensor score_rows;
            const Tensor w = step_weights(arch, tape.value(v), batch, cfg, fisher, score_rows);
            const ad::Var loss = weighted_loss(tape, forward(tape, arch, v, batch.coords), batch.targets, w);
            losses.push_back(tape.value(loss).item());
            wsum += mean_of(w);
            ad::Var g = tape.gradient_graph(loss, v);
            if (mask_var) {
                g = tape.mul(g, *mask_var);
            }
            const Tensor coef = step_sizes(fisher, cfg, state.eta_inner, n, fisher_offset(arch, cfg));
            const ad::Var update = coef.empty() ? tape.scale(g, state.eta_inner) : tape.mul(g, tape.constant(coef));
            v = tape.sub(v, update);
            absorb_scores(fisher, score_rows);
        }
        res.task_losses.push_back(std::move(losses));
        res.mean_weights.push_back(state.inner_steps ? wsum / static_cast<double>(state.inner_steps) : 1.0);
        fishers.push_back(fisher);
    }
    source.end_adaptation();
    for (std::size_t m = 0; m < module_var.size(); ++m) {
        res.adapted.module(m) = tape.value(module_var[m]);
    }

    const auto terms = outer_terms(source);
    std::optional<ad::Var> total;
    for (const auto& term : terms) {
        const ad::Var v = module_var[res.map.task_module[term.task]];
        const Tensor w = outer_weights(arch, tape.value(v), *term.query, cfg, fishers[term.task]);
        const ad::Var loss = weighted_loss(tape, forward(tape, arch, v, term.query->coords), term.query->targets, w);
        total = total ? tape.add(*total, loss) : loss;
    }
    const ad::Var outer = tape.scale(*total, 1.0 / static_cast<double>(terms.size()));
    res.outer_loss = tape.value(outer).item();
    res.meta_gradient = tape.gradient(outer, leaf);
}

} // namespace

EpisodeResult run_episode(const MetaState& state, TaskSource& source, Rng& rng, bool gradient)
{
    state.validate();
    EpisodeResult res;
    res.map = region_map(source, state.n_modules);
    res.adapted = ModularField::instantiate(state.shared, res.map.boxes);
    try {
        if (gradient && state.mode == MetaMode::SecondOrder) {
            second_order_episode(state, source, rng, res);
        } else {
            first_order_episode(state, source, rng, gradient, res);
        }
        if (!std::isfinite(res.outer_loss)) {
            throw NumericError("non-finite outer loss");
        }
    } catch (const NumericError& e) {
        res.aborted = true;
        res.error = e.what();
        res.meta_gradient = Tensor();
    }
    return res;
}

EpisodeResult run_episode(const MetaState& state, const Episode& episode, Rng& rng, bool gradient)
{
    EpisodeSource source(episode);
    return run_episode(state, source, rng, gradient);
}

OuterUpdate outer_update(MetaState& state, const std::vector<EpisodeResult>& results)
{
    OuterUpdate out;
    const std::size_t n = state.shared.theta.size();
    Tensor mean(Shape{n}, 0.0);
    std::size_t used = 0;
    for (const auto& r : results) {
        if (r.aborted || r.meta_gradient.size() != n) {
            ++out.aborted;
            continue;
        }
        kernels::active().add(n, mean.ptr(), r.meta_gradient.ptr(), mean.ptr());
        out.outer_loss += r.outer_loss;
        ++used;
    }
    ++state.outer_step;
    if (used == 0) {
        out.outer_loss = std::nan("");
        return out;
    }
    const double inv = 1.0 / static_cast<double>(used);
    kernels::active().scale(n, inv, mean.ptr(), mean.ptr());
    out.outer_loss *= inv;
    if (!mean.all_finite()) {
        return out;
    }
    if (state.momentum > 0.0) {
        if (state.velocity.size() != n) {
            state.velocity = Tensor(Shape{n}, 0.0);
        }
        kernels::active().scale(n, state.momentum, state.velocity.ptr(), state.velocity.ptr());
        kernels::active().add(n, state.velocity.ptr(), mean.ptr(), state.velocity.ptr());
        kernels::active().descend(n, state.shared.theta.ptr(), state.velocity.ptr(), state.eta_outer, nullptr);
    } else {
        kernels::active().descend(n, state.shared.theta.ptr(), mean.ptr(), state.eta_outer, nullptr);
    }
    out.applied = true;
    return out;
}

Episode make_episode(const Signal& signal, const SplitSpec& spec)
{
    switch (spec.kind) {
    case SplitKind::Spatial:
        return split_spatial(signal, spec.tasks, std::min(spec.axis, signal.dims() - 1));
    case SplitKind::Temporal:
        return split_temporal(signal, spec.tasks);
    case SplitKind::Resolution:
        return split_resolution(signal, spec.tasks);
    }
    throw ContractError("unknown split kind");
}

std::vector<TrainLogRow> meta_train(MetaState& state, const std::vector<Signal>& signals, const MetaTrainConfig& cfg,
                                    const Rng& rng,
                                    const std::function<void(const MetaState&, const TrainLogRow&)>& on_step)
{
    state.validate();
    require(!signals.empty(), "meta-training needs at least one signal");
    require(cfg.meta_batch >= 1, "meta batch must be >= 1");
    std::vector<TrainLogRow> log;
    const auto t0 = Clock::now();
    while (state.outer_step < cfg.outer_steps) {
        const std::size_t step = state.outer_step;
        std::vector<EpisodeResult> results(cfg.meta_batch);
        parallel_for(cfg.meta_batch, [&](std::size_t b) {
            Rng r = rng.split(static_cast<std::uint64_t>(step) * cfg.meta_batch + b);
            const Signal& sig = signals[r.below(signals.size())];
            Episode ep = make_episode(sig, cfg.split);
            if (cfg.context_size > 0) {
                for (auto& task : ep.tasks) {
                    const std::size_t m = std::min(cfg.context_size, task.context.size());
                    task = sample_context_query(task, m, r, cfg.query_mode);
                    if (task.query.empty()) {
                        task.query = task.context;
                    }
                }
            }
            results[b] = run_episode(state, ep, r, true);
        });
        const OuterUpdate upd = outer_update(state, results);
        const TrainLogRow row{state.outer_step, upd.outer_loss, ms_since(t0)};
        log.push_back(row);
        if (on_step) {
            on_step(state, row);
        }
    }
    return log;
}

SequenceSpec sequence_from_state(const MetaState& state, std::string name)
{
    SequenceSpec spec;
    spec.name = std::move(name);
    spec.arch = state.shared.arch;
    spec.init = state.shared.theta;
    spec.adapt = state.adapt_options();
    spec.n_modules = state.n_modules;
    return spec;
}

SequenceReport run_sequence(const SequenceSpec& spec, const Episode& episode, const std::vector<std::size_t>& steps,
                            const Rng& rng, TaskSource* source)
{
    require(!steps.empty(), "empty evaluation schedule");
    for (std::size_t i = 1; i < steps.size(); ++i) {
        require(steps[i] > steps[i - 1], "evaluation steps must strictly increase");
    }
    EpisodeSource own(episode);
    TaskSource& src = source ? *source : own;
    require(src.size() == episode.size(), "task source and episode disagree on the task count");

    const SharedInit shared{spec.arch, spec.init};
    const RegionMap map = region_map(episode, spec.n_modules);
    const std::size_t t = episode.size();
    const double span = episode.value_hi - episode.value_lo;

    // every sample any task evaluates on, in signal order
    std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> owners;
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t r = 0; r < episode.tasks[i].query.size(); ++r) {
            owners.push_back({episode.tasks[i].query.index[r], {i, r}});
        }
    }
    std::sort(owners.begin(), owners.end());
    owners.erase(std::unique(owners.begin(), owners.end(),
                             [](const auto& a, const auto& b) { return a.first == b.first; }),
                 owners.end());
    Samples full{Tensor(Shape{owners.size(), spec.arch.d_in}), Tensor(Shape{owners.size(), spec.arch.d_out}), {}};
    for (std::size_t k = 0; k < owners.size(); ++k) {
        const auto [task, row] = owners[k].second;
        const Samples& q = episode.tasks[task].query;
        for (std::size_t a = 0; a < spec.arch.d_in; ++a) {
            full.coords.at(k, a) = q.coords.at(row, a);
        }
        for (std::size_t c = 0; c < spec.arch.d_out; ++c) {
            full.targets.at(k, c) = q.targets.at(row, c);
        }
        full.index.push_back(owners[k].first);
    }

    SequenceReport report;
    for (const std::size_t s : steps) {
        Rng run_rng = rng;
        ModularField field = ModularField::instantiate(shared, map.boxes);
        std::unique_ptr<StepHooks> hooks = spec.make_hooks ? spec.make_hooks() : nullptr;
        FisherAccumulator fisher = make_fisher(spec.arch, spec.adapt.fim);
        std::vector<std::vector<double>> trace(t, std::vector<double>(t, 0.0));
        std::vector<std::vector<Tensor>> snaps;
        double wall = 0.0;
        src.begin_pass();
        for (std::size_t i = 0; i < t; ++i) {
            const auto t0 = Clock::now();
            src.begin_task(i);
            const Samples& ctx = src.context(i);
            if (!spec.adapt.fim.carry_fisher) {
                fisher = make_fisher(spec.arch, spec.adapt.fim);
            }
            Tensor& theta = field.module(map.task_module[i]);
            if (hooks) {
                hooks->begin_task(i, ctx);
            }
            adapt_task(spec.arch, theta, ctx, s, spec.adapt, fisher, run_rng, hooks.get());
            if (hooks) {
                hooks->end_task(i, spec.arch, theta, ctx);
            }
            wall += ms_since(t0);
            for (std::size_t j = 0; j < t; ++j) {
                const Samples& q = episode.tasks[j].query;
                trace[i][j] = psnr(field.compose_predict(q.coords), q.targets, span);
            }
            snaps.push_back(field.modules());
        }
        src.end_adaptation();
        const Tensor recon = field.compose_predict(full.coords);
        report.table.add({spec.name, episode.signal_id, s, psnr(recon, full.targets, span), trace[t - 1], wall});
        report.forgetting.push_back(std::move(trace));
        report.modules.push_back(std::move(snaps));
        if (spec.keep_reconstructions) {
            report.reconstructions.push_back(recon);
        }
    }
    return report;
}

MetricTable meta_test_adapt(const MetaState& state, const Episode& episode, const std::vector<std::size_t>& steps,
                            const Rng& rng, const std::string& name)
{
    state.validate();
    return run_sequence(sequence_from_state(state, name), episode, steps, rng).table;
}

std::vector<std::size_t> default_schedule()
{
    std::vector<std::size_t> s;
    for (std::size_t k = 1; k <= 4096; k *= 2) {
        s.push_back(k);
    }
    return s;
}

} // namespace mclnf
