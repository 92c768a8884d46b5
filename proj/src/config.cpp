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

#include "mclnf/config.hpp"

#include "mclnf/errors.hpp"
#include "mclnf/io.hpp"
#include "mclnf/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace mclnf {

namespace {

std::vector<KeySpec> build_schema()
{
    using K = KeyType;
    std::vector<KeySpec> s;
    auto add = [&s](std::string key, KeyType type, std::string def, std::string help,
                    std::vector<std::string> choices = {}, bool exempt = false) {
        s.push_back({std::move(key), type, std::move(def), std::move(help), std::move(choices), exempt});
    };
    add("seed", K::Uint, "0", "root seed for every random draw");
    add("arch.layers", K::Uint, "5", "linear layers");
    add("arch.hidden", K::Uint, "128", "hidden width");
    add("arch.d_in", K::Uint, "2", "coordinate dimension");
    add("arch.d_out", K::Uint, "1", "value channels");
    add("arch.activation", K::Choice, "sine", "hidden activation", {"sine", "relu"});
    add("arch.omega0", K::Double, "30", "sine frequency scale");
    add("arch.pe_frequencies", K::Uint, "0", "positional encoding frequencies, 0 = off");
    add("data.family", K::Choice, "gabor-2d", "synthetic family", {"gabor-2d", "random-fourier-1d"});
    add("data.size", K::Uint, "0", "grid side (gabor) or length (fourier), 0 = family default");
    add("data.train_signals", K::Uint, "64", "meta-training signals");
    add("data.test_signals", K::Uint, "20", "held-out signals");
    add("data.path", K::String, "", "signal file or frame directory; empty = synthetic");
    add("split.kind", K::Choice, "spatial", "task split", {"spatial", "temporal", "resolution"});
    add("split.tasks", K::Uint, "4", "tasks per episode");
    add("split.axis", K::Uint, "1", "axis cut by spatial splits");
    add("modules", K::Uint, "0", "modules per episode, 0 = one per task");
    add("strategy", K::String, "OURS-MIM", "strategy for meta-train and adapt");
    add("strategies", K::String, "OL,CL,ER,EWC,MAML+CL,OML,OURS-MOD,OURS-MIM", "compare sweep");
    add("fim.lambda", K::Double, "0.1", "Fisher weight strength");
    add("fim.rho", K::Double, "0.99", "Fisher EMA decay, 1 = running mean");
    add("fim.eps", K::Double, "1e-8", "Fisher floor");
    add("fim.normalization", K::Choice, "batch-mean-one", "weight normalization", {"none", "batch-mean-one"});
    add("fim.scope", K::Choice, "full", "score parameters", {"full", "last-layer"});
    add("fim.precondition", K::Bool, "false", "divide steps by the Fisher");
    add("fim.carry_fisher", K::Bool, "false", "keep the Fisher across tasks");
    add("fim.outer_weights", K::Bool, "true", "weight the outer loss too");
    add("meta.outer_steps", K::Uint, "5000", "outer steps", {}, true);
    add("meta.batch", K::Uint, "4", "episodes per outer step");
    add("meta.inner_steps", K::Uint, "16", "inner steps per task");
    add("meta.eta_inner", K::Double, "0.01", "inner learning rate");
    add("meta.eta_outer", K::Double, "0.001", "outer learning rate");
    add("meta.momentum", K::Double, "0", "outer momentum");
    add("meta.mode", K::Choice, "first-order", "meta-gradient", {"first-order", "second-order"});
    add("meta.context_size", K::Uint, "0", "context samples per task, 0 = all");
    add("meta.query", K::Choice, "held-out", "query set", {"held-out", "full"});
    add("meta.batch_size", K::Uint, "0", "inner minibatch, 0 = whole context");
    add("meta.checkpoint_every", K::Uint, "0", "checkpoint period, 0 = final only", {}, true);
    add("adapt.eta", K::Double, "0.01", "test-time learning rate");
    add("adapt.batch_size", K::Uint, "0", "test-time minibatch, 0 = whole context");
    add("er.ratio", K::Double, "0.5", "replayed fraction of each batch");
    add("er.capacity", K::Uint, "0", "buffer size, 0 = a quarter of one task");
    add("ewc.lambda", K::Double, "1", "EWC penalty strength");
    add("oml.layers", K::UintList, "", "inner-loop layers, empty = last");
    add("eval.steps", K::UintList, "0,1,2,4,8,16,32,64,128,256,512,1024,2048,4096", "evaluation schedule",
        {}, true);
    add("out.dir", K::String, ".", "output directory", {}, true);
    return s;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_uint(const std::string& s, std::uint64_t& out)
{
    if (s.empty())
        return false;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::vector<std::string> split_commas(const std::string& s)
{
    std::vector<std::string> out;
    if (trim(s).empty())
        return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(trim(item));
    return out;
}

void check_value(const KeySpec& k, const std::string& v)
{
    auto bad = [&](const std::string& why) { throw ConfigError("config key '" + k.key + "': " + why); };
    switch (k.type) {
    case KeyType::Uint: {
        std::uint64_t u = 0;
        if (!parse_uint(v, u))
            bad("expected a non-negative integer, got '" + v + "'");
        break;
    }
    case KeyType::Double: {
        double d = 0.0;
        try {
            d = parse_double(v);
        } catch (const ConfigError&) {
            bad("expected a number, got '" + v + "'");
        }
        if (!std::isfinite(d))
            bad("must be finite");
        break;
    }
    case KeyType::Bool:
        if (v != "true" && v != "false")
            bad("expected true or false, got '" + v + "'");
        break;
    case KeyType::Choice:
        if (std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end())
            bad("'" + v + "' is not one of the allowed values");
        break;
    case KeyType::UintList:
        for (const auto& item : split_commas(v)) {
            std::uint64_t u = 0;
            if (!parse_uint(item, u))
                bad("bad list entry '" + item + "'");
        }
        break;
    case KeyType::String:
        break;
    }
}

} // namespace

const std::vector<KeySpec>& config_schema()
{
    static const std::vector<KeySpec> schema = build_schema();
    return schema;
}

const KeySpec* find_key(const std::string& key)
{
    for (const auto& k : config_schema())
        if (k.key == key)
            return &k;
    return nullptr;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& text)
{
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

Config::Config()
{
    for (const auto& k : config_schema()) {
        values_[k.key] = k.default_value;
        explicit_[k.key] = false;
    }
}

Config Config::parse(std::istream& in, const std::string& origin)
{
    Config c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.resize(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto where = origin + ":" + std::to_string(lineno) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where + "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!find_key(key))
            throw ConfigError(where + "unknown key '" + key + "'");
        if (c.explicit_[key])
            throw ConfigError(where + "duplicate key '" + key + "'");
        try {
            c.set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return c;
}

Config Config::parse_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open config '" + path + "'");
    return parse(in, path);
}

Config Config::parse_string(const std::string& text)
{
    std::istringstream in(text);
    return parse(in);
}

void Config::set(const std::string& key, const std::string& value)
{
    const KeySpec* k = find_key(key);
    if (!k)
        throw ConfigError("unknown key '" + key + "'");
    check_value(*k, value);
    values_[key] = value;
    explicit_[key] = true;
}

const std::string& Config::raw(const std::string& key) const
{
    const auto it = values_.find(key);
    if (it == values_.end())
        throw ConfigError("unknown key '" + key + "'");
    return it->second;
}

bool Config::is_default(const std::string& key) const
{
    static_cast<void>(raw(key));
    return !explicit_.at(key);
}

std::uint64_t Config::get_uint(const std::string& key) const
{
    std::uint64_t u = 0;
    if (!parse_uint(raw(key), u))
        throw ConfigError("config key '" + key + "' is not an integer");
    return u;
}

double Config::get_double(const std::string& key) const
{
    return parse_double(raw(key));
}

bool Config::get_bool(const std::string& key) const
{
    return raw(key) == "true";
}

const std::string& Config::get_string(const std::string& key) const
{
    return raw(key);
}

std::vector<std::size_t> Config::get_list(const std::string& key) const
{
    std::vector<std::size_t> out;
    for (const auto& item : split_commas(raw(key))) {
        std::uint64_t u = 0;
        parse_uint(item, u);
        out.push_back(static_cast<std::size_t>(u));
    }
    return out;
}

std::string Config::canonical(bool hashed_only) const
{
    std::string out;
    for (const auto& [k, v] : values_) {
        if (hashed_only && find_key(k)->hash_exempt)
            continue;
        out += k + "=" + v + "\n";
    }
    return out;
}

std::uint64_t Config::hash() const
{
    return fnv1a64(canonical(true));
}

FieldArch arch_from(const Config& c)
{
    FieldArch a;
    a.n_layers = c.get_uint("arch.layers");
    a.hidden = c.get_uint("arch.hidden");
    a.d_in = c.get_uint("arch.d_in");
    a.d_out = c.get_uint("arch.d_out");
    a.activation = c.get_string("arch.activation") == "relu" ? Activation::Relu : Activation::Sine;
    a.omega0 = c.get_double("arch.omega0");
    a.pe_frequencies = c.get_uint("arch.pe_frequencies");
    try {
        a.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("arch: ") + e.what());
    }
    return a;
}

FimConfig fim_from(const Config& c)
{
    FimConfig f;
    f.lambda = c.get_double("fim.lambda");
    f.rho = c.get_double("fim.rho");
    f.eps = c.get_double("fim.eps");
    f.normalization = c.get_string("fim.normalization") == "none" ? WeightNorm::None : WeightNorm::BatchMeanOne;
    f.scope = c.get_string("fim.scope") == "last-layer" ? ScoreScope::LastLayer : ScoreScope::FullParams;
    f.precondition = c.get_bool("fim.precondition");
    f.carry_fisher = c.get_bool("fim.carry_fisher");
    f.outer_weights = c.get_bool("fim.outer_weights");
    try {
        f.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("fim: ") + e.what());
    }
    return f;
}

SplitSpec split_from(const Config& c)
{
    SplitSpec s;
    const std::string& k = c.get_string("split.kind");
    s.kind = k == "temporal" ? SplitKind::Temporal : k == "resolution" ? SplitKind::Resolution : SplitKind::Spatial;
    s.tasks = c.get_uint("split.tasks");
    s.axis = c.get_uint("split.axis");
    if (s.tasks == 0)
        throw ConfigError("split.tasks must be positive");
    return s;
}

MetaTrainConfig train_from(const Config& c)
{
    MetaTrainConfig t;
    t.outer_steps = c.get_uint("meta.outer_steps");
    t.meta_batch = c.get_uint("meta.batch");
    t.split = split_from(c);
    t.context_size = c.get_uint("meta.context_size");
    t.query_mode = c.get_string("meta.query") == "full" ? QueryMode::Full : QueryMode::HeldOut;
    if (t.meta_batch == 0)
        throw ConfigError("meta.batch must be positive");
    return t;
}

MetaState meta_base_from(const Config& c)
{
    MetaState base;
    base.shared.arch = arch_from(c);
    Rng rng = Rng(c.get_uint("seed")).split(streams::init);
    base.shared.theta = init_params(base.shared.arch, rng);
    base.eta_inner = c.get_double("meta.eta_inner");
    base.eta_outer = c.get_double("meta.eta_outer");
    base.momentum = c.get_double("meta.momentum");
    base.inner_steps = c.get_uint("meta.inner_steps");
    base.fim = fim_from(c);
    base.mode = c.get_string("meta.mode") == "second-order" ? MetaMode::SecondOrder : MetaMode::FirstOrder;
    base.n_modules = c.get_uint("modules");
    base.batch_size = c.get_uint("meta.batch_size");
    return base;
}

MetaState meta_state_from(const Config& c)
{
    const Strategy s = parse_strategy(c.get_string("strategy"));
    if (!is_meta_strategy(s))
        throw ConfigError(std::string("strategy ") + strategy_name(s) + " has no meta-training stage");
    MetaState out = meta_state_for(strategy_from(c, s), meta_base_from(c));
    try {
        out.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("meta: ") + e.what());
    }
    return out;
}

StrategyConfig strategy_from(const Config& c, Strategy s)
{
    StrategyConfig sc;
    sc.strategy = s;
    sc.eta = c.get_double("adapt.eta");
    sc.fim = fim_from(c);
    sc.batch_size = c.get_uint("adapt.batch_size");
    sc.replay_ratio = c.get_double("er.ratio");
    sc.replay_capacity = c.get_uint("er.capacity");
    sc.ewc_lambda = c.get_double("ewc.lambda");
    sc.oml_layers = c.get_list("oml.layers");
    sc.n_modules = c.get_uint("modules");
    sc.seed = c.get_uint("seed");
    if (sc.replay_ratio < 0.0 || sc.replay_ratio > 1.0)
        throw ConfigError("er.ratio must be in [0, 1]");
    if (sc.eta <= 0.0)
        throw ConfigError("adapt.eta must be positive");
    return sc;
}

std::vector<Strategy> strategies_from(const Config& c)
{
    std::vector<Strategy> out;
    for (const auto& name : split_commas(c.get_string("strategies")))
        out.push_back(parse_strategy(name));
    if (out.empty())
        throw ConfigError("strategies is empty");
    return out;
}

std::vector<std::size_t> eval_steps_from(const Config& c)
{
    auto steps = c.get_list("eval.steps");
    if (steps.empty())
        throw ConfigError("eval.steps is empty");
    for (std::size_t i = 1; i < steps.size(); ++i)
        if (steps[i] <= steps[i - 1])
            throw ConfigError("eval.steps must be strictly increasing");
    return steps;
}

Family family_from(const Config& c)
{
    return parse_family(c.get_string("data.family"));
}

std::vector<Signal> train_signals_from(const Config& c)
{
    if (!c.get_string("data.path").empty())
        return {io::load_signal(c.get_string("data.path"))};
    Rng rng = Rng(c.get_uint("seed")).split(streams::train);
    return synth_family(rng, family_from(c), c.get_uint("data.train_signals"), c.get_uint("data.size"));
}

std::vector<Signal> test_signals_from(const Config& c)
{
    if (!c.get_string("data.path").empty())
        return {io::load_signal(c.get_string("data.path"))};
    Rng rng = Rng(c.get_uint("seed")).split(streams::test);
    return synth_family(rng, family_from(c), c.get_uint("data.test_signals"), c.get_uint("data.size"));
}

Signal signal_from_spec(const std::string& spec, const Config& c)
{
    const std::string prefix = "synthetic:";
    if (spec.rfind(prefix, 0) != 0)
        return io::load_signal(spec);
    const auto parts = [&] {
        std::vector<std::string> out;
        std::stringstream ss(spec.substr(prefix.size()));
        std::string item;
        while (std::getline(ss, item, ':'))
            out.push_back(item);
        return out;
    }();
    if (parts.empty() || parts.size() > 3)
        throw ConfigError("bad synthetic signal spec '" + spec + "'");
    const Family fam = parse_family(parts[0]);
    std::uint64_t index = 0;
    std::uint64_t size = c.get_uint("data.size");
    if (parts.size() > 1 && !parse_uint(parts[1], index))
        throw ConfigError("bad signal index in '" + spec + "'");
    if (parts.size() > 2 && !parse_uint(parts[2], size))
        throw ConfigError("bad signal size in '" + spec + "'");
    Rng rng = Rng(c.get_uint("seed")).split(streams::test);
    auto all = synth_family(rng, fam, index + 1, size);
    return std::move(all.back());
}

void check_signal_arch(const Signal& signal, const FieldArch& arch)
{
    if (signal.dims() != arch.d_in || signal.channels != arch.d_out)
        throw ConfigError("signal '" + signal.id + "' has " + std::to_string(signal.dims()) + " coordinate dims and " +
                          std::to_string(signal.channels) + " channels but the model expects d_in=" +
                          std::to_string(arch.d_in) + ", d_out=" + std::to_string(arch.d_out));
}

Episode episode_from(const Config& c, Signal signal)
{
    const SplitSpec split = split_from(c);
    if (split.kind == SplitKind::Temporal && signal.kind == SignalKind::Synthetic && signal.dims() == 1)
        signal.kind = SignalKind::Audio;
    try {
        return make_episode(signal, split);
    } catch (const Error& e) {
        throw ConfigError(std::string("split: ") + e.what());
    }
}

Tensor random_init_from(const Config& c, const FieldArch& arch)
{
    Rng rng = Rng(c.get_uint("seed")).split(streams::init);
    return init_params(arch, rng);
}

void write_schema(std::ostream& out)
{
    for (const auto& k : config_schema()) {
        out << "# " << k.help;
        if (!k.choices.empty()) {
            out << " (";
            for (std::size_t i = 0; i < k.choices.size(); ++i)
                out << (i ? "|" : "") << k.choices[i];
            out << ")";
        }
        out << "\n" << k.key << " = " << k.default_value << "\n";
    }
}

} // namespace mclnf
