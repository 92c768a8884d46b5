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

#include "mclnf/baselines.hpp"

#include "mclnf/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>
#include <numeric>
#include <unordered_set>

namespace mclnf {

namespace {

struct NamedStrategy {
    Strategy s;
    const char* name;
};

constexpr NamedStrategy kNames[] = {
    {Strategy::OL, "OL"},           {Strategy::CL, "CL"},
    {Strategy::ER, "ER"},           {Strategy::EWC, "EWC"},
    {Strategy::MamlCl, "MAML+CL"},  {Strategy::OML, "OML"},
    {Strategy::OursMod, "OURS-MOD"}, {Strategy::OursMim, "OURS-MIM"},
};

std::string upper(std::string s)
{
    for (auto& c : s)
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

Samples concat(const std::vector<const Samples*>& parts)
{
    std::size_t m = 0;
    std::size_t dims = 0;
    std::size_t ch = 0;
    for (const auto* p : parts) {
        if (p->empty())
            continue;
        m += p->size();
        dims = p->coords.cols();
        ch = p->targets.cols();
    }
    Samples out;
    out.coords = Tensor({m, dims});
    out.targets = Tensor({m, ch});
    out.index.reserve(m);
    std::size_t r = 0;
    for (const auto* p : parts) {
        for (std::size_t i = 0; i < p->size(); ++i, ++r) {
            std::copy_n(p->coords.ptr() + i * dims, dims, out.coords.ptr() + r * dims);
            std::copy_n(p->targets.ptr() + i * ch, ch, out.targets.ptr() + r * ch);
            out.index.push_back(p->index[i]);
        }
    }
    return out;
}

Samples sorted_union(const std::vector<const Samples*>& parts)
{
    Samples all = concat(parts);
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return all.index[a] < all.index[b]; });
    return gather(all, order);
}

class ReplayHooks final : public StepHooks {
public:
    ReplayHooks(std::size_t capacity, double ratio) : buffer_(capacity), ratio_(ratio) {}

    void begin_task(std::size_t task, const Samples& context) override
    {
        task_ = task;
        if (buffer_.capacity() == 0)
            buffer_.set_capacity(std::max<std::size_t>(1, context.size() / 4));
    }

    bool mix(const Samples& batch, Rng& rng, Samples& out) override
    {
        if (buffer_.empty())
            return false;
        out = replay_mix(buffer_, batch, ratio_, rng);
        return true;
    }

    void after_step(const Samples& batch, Rng& rng) override
    {
        // Each signal sample enters the reservoir stream once.
        for (std::size_t i = 0; i < batch.size(); ++i)
            if (offered_.insert(batch.index[i]).second)
                buffer_.offer(batch, i, task_, rng);
    }

private:
    ReplayBuffer buffer_;
    double ratio_;
    std::size_t task_ = 0;
    std::unordered_set<std::size_t> offered_;
};

class EwcHooks final : public StepHooks {
public:
    explicit EwcHooks(double lambda) : lambda_(lambda) {}

    void end_task(std::size_t, const FieldArch& arch, const Tensor& theta, const Samples& context) override
    {
        // Empirical Fisher: mean squared per-sample score at the task optimum.
        Tensor g = scores(arch, theta, context.coords, context.targets);
        Tensor f({theta.size()}, 0.0);
        const std::size_t p = theta.size();
        for (std::size_t j = 0; j < context.size(); ++j)
            for (std::size_t k = 0; k < p; ++k) {
                const double v = g.ptr()[j * p + k];
                f.ptr()[k] += v * v;
            }
        if (!context.empty())
            for (auto& v : f.data())
                v /= static_cast<double>(context.size());
        anchors_.push_back({theta, std::move(f)});
    }

    std::optional<ad::Var> penalty(ad::Tape& tape, ad::Var theta) override
    {
        if (anchors_.empty() || lambda_ == 0.0)
            return std::nullopt;
        return ewc_penalty(tape, theta, anchors_, lambda_);
    }

private:
    double lambda_;
    std::vector<EwcAnchor> anchors_;
};

} // namespace

const char* strategy_name(Strategy s)
{
    for (const auto& n : kNames)
        if (n.s == s)
            return n.name;
    return "?";
}

Strategy parse_strategy(const std::string& name)
{
    const std::string u = upper(name);
    for (const auto& n : kNames)
        if (u == n.name)
            return n.s;
    if (u == "MAML" || u == "MAML-CL")
        return Strategy::MamlCl;
    throw ConfigError("unknown strategy '" + name + "'");
}

std::vector<Strategy> all_strategies()
{
    std::vector<Strategy> out;
    for (const auto& n : kNames)
        out.push_back(n.s);
    return out;
}

bool is_meta_strategy(Strategy s)
{
    return s == Strategy::MamlCl || s == Strategy::OML || s == Strategy::OursMod || s == Strategy::OursMim;
}

void ReplayBuffer::offer(const Samples& pool, std::size_t row, std::size_t task, Rng& rng)
{
    if (row >= pool.size())
        throw ContractError("replay offer: row out of range");
    ++seen_;
    if (capacity_ == 0)
        return;
    std::size_t slot = rows_.size();
    if (rows_.size() >= capacity_) {
        slot = rng.below(seen_);
        if (slot >= capacity_)
            return;
    }
    const std::size_t dims = pool.coords.cols();
    const std::size_t ch = pool.targets.cols();
    Row r{std::vector<double>(pool.coords.ptr() + row * dims, pool.coords.ptr() + (row + 1) * dims),
          std::vector<double>(pool.targets.ptr() + row * ch, pool.targets.ptr() + (row + 1) * ch)};
    if (slot == rows_.size()) {
        rows_.push_back(std::move(r));
        ids_.push_back(pool.index[row]);
        tags_.push_back(task);
    } else {
        rows_[slot] = std::move(r);
        ids_[slot] = pool.index[row];
        tags_[slot] = task;
    }
}

Samples ReplayBuffer::draw(std::size_t n, Rng& rng) const
{
    if (n > rows_.size())
        throw ContractError("replay draw: asked for more samples than stored");
    std::vector<std::size_t> pick(rows_.size());
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i)
        std::swap(pick[i], pick[i + rng.below(pick.size() - i)]);
    pick.resize(n);
    std::sort(pick.begin(), pick.end());
    Samples out;
    const std::size_t dims = n ? rows_[pick[0]].coords.size() : 0;
    const std::size_t ch = n ? rows_[pick[0]].targets.size() : 0;
    out.coords = Tensor({n, dims});
    out.targets = Tensor({n, ch});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = rows_[pick[i]];
        std::copy(r.coords.begin(), r.coords.end(), out.coords.ptr() + i * dims);
        std::copy(r.targets.begin(), r.targets.end(), out.targets.ptr() + i * ch);
        out.index.push_back(ids_[pick[i]]);
    }
    return out;
}

Samples replay_mix(const ReplayBuffer& buffer, const Samples& current, double ratio, Rng& rng)
{
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw ContractError("replay ratio must be in [0, 1]");
    if (buffer.empty() || current.empty())
        return current;
    const std::size_t m = current.size();
    std::size_t r = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(m)));
    r = std::min(r, buffer.size());
    const std::size_t keep = m - r;
    std::vector<std::size_t> pick(m);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    for (std::size_t i = 0; i < keep; ++i)
        std::swap(pick[i], pick[i + rng.below(m - i)]);
    pick.resize(keep);
    std::sort(pick.begin(), pick.end());
    Samples cur = gather(current, pick);
    Samples old = buffer.draw(r, rng);
    return concat({&cur, &old});
}

double ewc_penalty(const Tensor& theta, const std::vector<EwcAnchor>& anchors, double lambda)
{
    double total = 0.0;
    for (const auto& a : anchors) {
        if (a.theta.size() != theta.size() || a.fisher.size() != theta.size())
            throw DimensionError("ewc anchor size mismatch");
        double s = 0.0;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double d = theta.ptr()[k] - a.theta.ptr()[k];
            s += a.fisher.ptr()[k] * d * d;
        }
        total += 0.5 * lambda * s;
    }
    return total;
}

ad::Var ewc_penalty(ad::Tape& tape, ad::Var theta, const std::vector<EwcAnchor>& anchors, double lambda)
{
    if (anchors.empty())
        throw ContractError("ewc penalty without anchors");
    std::optional<ad::Var> total;
    for (const auto& a : anchors) {
        const ad::Var d = tape.sub(theta, tape.constant(a.theta));
        const ad::Var q = tape.sum(tape.mul(tape.constant(a.fisher), tape.square(d)));
        total = total ? tape.add(*total, q) : q;
    }
    return tape.scale(*total, 0.5 * lambda);
}

Tensor oml_inner_mask(const FieldArch& arch, const std::vector<std::size_t>& layers)
{
    if (layers.empty())
        throw ContractError("OML mask needs at least one inner-loop layer");
    const auto layout = layer_layout(arch);
    Tensor mask({param_count(arch)}, 0.0);
    for (const std::size_t l : layers) {
        if (l >= layout.size())
            throw ContractError("OML mask: layer " + std::to_string(l) + " out of range");
        for (std::size_t k = layout[l].begin(); k < layout[l].end(); ++k)
            mask.ptr()[k] = 1.0;
    }
    return mask;
}

FimConfig strategy_fim(const StrategyConfig& cfg)
{
    FimConfig f = cfg.fim;
    if (cfg.strategy != Strategy::OursMim) {
        f.lambda = 0.0;
        f.precondition = false;
        f.outer_weights = false;
    }
    return f;
}

Tensor strategy_mask(const StrategyConfig& cfg, const FieldArch& arch)
{
    if (cfg.strategy != Strategy::OML)
        return {};
    if (cfg.oml_layers.empty())
        return oml_inner_mask(arch, {static_cast<std::size_t>(arch.n_layers - 1)});
    return oml_inner_mask(arch, cfg.oml_layers);
}

std::size_t strategy_modules(Strategy s, std::size_t modular)
{
    return (s == Strategy::OursMod || s == Strategy::OursMim) ? modular : 1;
}

MetaState meta_state_for(const StrategyConfig& cfg, const MetaState& base)
{
    if (!is_meta_strategy(cfg.strategy))
        throw ContractError(std::string(strategy_name(cfg.strategy)) + " is not meta-trained");
    MetaState s = base;
    s.fim = strategy_fim(cfg);
    s.n_modules = strategy_modules(cfg.strategy, base.n_modules);
    s.mask = strategy_mask(cfg, s.shared.arch);
    return s;
}

Episode whole_signal(const Episode& episode)
{
    if (episode.tasks.empty())
        throw ContractError("whole_signal: empty episode");
    std::vector<const Samples*> ctx;
    std::vector<const Samples*> qry;
    for (const auto& t : episode.tasks) {
        ctx.push_back(&t.context);
        qry.push_back(&t.query);
    }
    Episode out;
    out.signal_id = episode.signal_id;
    out.split = episode.split;
    out.grid = episode.grid;
    out.channels = episode.channels;
    out.value_lo = episode.value_lo;
    out.value_hi = episode.value_hi;
    FieldTask t;
    t.index = 0;
    t.region = Box::full(episode.grid.size());
    t.context = sorted_union(ctx);
    t.query = sorted_union(qry);
    out.tasks.push_back(std::move(t));
    return out;
}

SequenceSpec strategy_spec(const StrategyConfig& cfg, const FieldArch& arch, const Tensor& init)
{
    SequenceSpec spec;
    spec.name = strategy_name(cfg.strategy);
    spec.arch = arch;
    spec.init = init;
    spec.adapt.eta = cfg.eta;
    spec.adapt.fim = strategy_fim(cfg);
    spec.adapt.batch_size = cfg.batch_size;
    spec.adapt.mask = strategy_mask(cfg, arch);
    spec.n_modules = strategy_modules(cfg.strategy, cfg.n_modules);
    spec.keep_reconstructions = cfg.keep_reconstructions;
    if (cfg.strategy == Strategy::ER) {
        const std::size_t cap = cfg.replay_capacity;
        const double ratio = cfg.replay_ratio;
        spec.make_hooks = [cap, ratio] { return std::make_unique<ReplayHooks>(cap, ratio); };
    } else if (cfg.strategy == Strategy::EWC) {
        const double lambda = cfg.ewc_lambda;
        spec.make_hooks = [lambda] { return std::make_unique<EwcHooks>(lambda); };
    }
    return spec;
}

SequenceReport run_strategy(const StrategyConfig& cfg, const Episode& episode, const FieldArch& arch,
                            const Tensor& init, const std::vector<std::size_t>& steps, const Rng& rng,
                            TaskSource* source)
{
    const SequenceSpec spec = strategy_spec(cfg, arch, init);
    if (cfg.strategy == Strategy::OL)
        return run_sequence(spec, whole_signal(episode), steps, rng);
    return run_sequence(spec, episode, steps, rng, source);
}

} // namespace mclnf
