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
#include "mclnf/checkpoint.hpp"
#include "mclnf/config.hpp"
#include "mclnf/errors.hpp"
#include "mclnf/io.hpp"
#include "mclnf/parallel.hpp"
#include "mclnf/selftest.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

namespace fs = std::filesystem;
using namespace mclnf;

namespace {

Config load_config(const std::string& path, const std::optional<std::uint64_t>& seed)
{
    Config c = path.empty() ? Config() : Config::parse_file(path);
    if (seed)
        c.set("seed", std::to_string(*seed));
    return c;
}

fs::path out_dir(const Config& c, const std::string& flag)
{
    fs::path dir = flag.empty() ? fs::path(c.get_string("out.dir")) : fs::path(flag);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

std::vector<std::size_t> parse_steps(const std::string& text)
{
    Config tmp;
    tmp.set("eval.steps", text);
    return eval_steps_from(tmp);
}

std::string recon_name(const Signal& s, std::size_t step)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "recon_step_%05zu", step);
    std::string name = buf;
    if (s.kind == SignalKind::Video)
        return name;
    if (s.dims() == 1)
        return name + ".wav";
    return name + (s.channels == 1 ? ".pgm" : ".ppm");
}

std::string hex(std::uint64_t v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Meta-trains one strategy from the config; logs to `log` when given.
MetaState train_strategy(const Config& c, Strategy s, const std::vector<Signal>& signals, std::ostream* log)
{
    MetaState st = meta_state_for(strategy_from(c, s), meta_base_from(c));
    const Rng rng = Rng(c.get_uint("seed")).split(streams::meta);
    meta_train(st, signals, train_from(c), rng, [&](const MetaState&, const TrainLogRow& row) {
        if (log)
            *log << row.outer_step << ',' << format_double(row.outer_loss) << ',' << format_double(row.wall_ms)
                 << '\n';
    });
    return st;
}

int cmd_meta_train(const std::string& config_path, const std::string& resume, bool force, const std::string& out,
                   const std::optional<std::uint64_t>& seed)
{
    const Config c = load_config(config_path, seed);
    MetaState st = meta_state_from(c);
    const Rng rng = Rng(c.get_uint("seed")).split(streams::meta);
    if (!resume.empty()) {
        const Checkpoint ck = load_checkpoint(resume);
        check_resume(ck, c.hash(), force);
        restore_state(ck, st);
    }
    const auto signals = train_signals_from(c);
    for (const auto& s : signals)
        check_signal_arch(s, st.shared.arch);
    const MetaTrainConfig tc = train_from(c);
    const fs::path dir = out_dir(c, out);
    const std::uint64_t every = c.get_uint("meta.checkpoint_every");

    std::ofstream log(dir / "train_log.csv", resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log)
        throw IoError("cannot write " + (dir / "train_log.csv").string());
    if (resume.empty())
        log << "outer_step,outer_loss,wall_ms\n";
    const std::uint64_t hash = c.hash();
    const std::size_t start = st.outer_step;
    meta_train(st, signals, tc, rng, [&](const MetaState& s, const TrainLogRow& row) {
        log << row.outer_step << ',' << format_double(row.outer_loss) << ',' << format_double(row.wall_ms) << '\n';
        if (every > 0 && s.outer_step % every == 0) {
            char name[48];
            std::snprintf(name, sizeof name, "ckpt_%08zu.bin", s.outer_step);
            save_checkpoint((dir / name).string(), make_checkpoint(s, rng, hash));
        }
    });
    const fs::path final_path = dir / "final.ckpt";
    save_checkpoint(final_path.string(), make_checkpoint(st, rng, hash));
    std::cout << "trained " << (st.outer_step - start) << " outer steps (now at " << st.outer_step << "), "
              << signals.size() << " signals, " << describe(st.shared.arch) << "\n"
              << "checkpoint: " << final_path.string() << "\n";
    return 0;
}

int cmd_adapt(const std::string& config_path, const std::string& ckpt, const std::string& signal_spec,
              const std::string& strategy_name_arg, const std::string& steps_arg, const std::string& out,
              const std::optional<std::uint64_t>& seed)
{
    const Config c = load_config(config_path, seed);
    const Strategy s = parse_strategy(strategy_name_arg.empty() ? c.get_string("strategy") : strategy_name_arg);
    const std::vector<std::size_t> steps = steps_arg.empty() ? eval_steps_from(c) : parse_steps(steps_arg);

    std::optional<Checkpoint> ck;
    if (!ckpt.empty())
        ck = load_checkpoint(ckpt);
    if (is_meta_strategy(s) && !ck)
        throw ConfigError(std::string(strategy_name(s)) + " adapts from a meta-trained init; pass --ckpt");
    const FieldArch arch = ck ? ck->arch : arch_from(c);
    const Tensor init = is_meta_strategy(s) ? ck->theta : random_init_from(c, arch);

    const Signal signal = signal_from_spec(signal_spec, c);
    check_signal_arch(signal, arch);
    const Episode ep = episode_from(c, signal);

    StrategyConfig sc = strategy_from(c, s);
    sc.keep_reconstructions = true;
    const auto report = run_strategy(sc, ep, arch, init, steps, Rng(c.get_uint("seed")).split(streams::adapt));

    const fs::path dir = out_dir(c, out);
    report.table.write_csv((dir / "metrics.csv").string());
    for (std::size_t r = 0; r < steps.size() && r < report.reconstructions.size(); ++r) {
        Signal rec = signal;
        rec.values = report.reconstructions[r];
        for (auto& v : rec.values.data())
            v = std::clamp(v, signal.value_lo, signal.value_hi);
        io::save_signal(dir / recon_name(signal, steps[r]), rec);
    }
    for (const auto& row : report.table.rows())
        std::cout << row.strategy << " " << row.signal_id << " step " << row.step << ": "
                  << format_double(row.psnr_db) << " dB\n";
    return 0;
}

int cmd_compare(const std::string& config_path, const std::vector<std::string>& init_args, const std::string& out,
                const std::optional<std::uint64_t>& seed)
{
    const Config c = load_config(config_path, seed);
    const auto strategies = strategies_from(c);
    const auto steps = eval_steps_from(c);
    const FieldArch arch = arch_from(c);
    const auto tests = test_signals_from(c);
    for (const auto& s : tests)
        check_signal_arch(s, arch);
    const fs::path dir = out_dir(c, out);

    std::map<Strategy, std::string> given;
    for (const auto& a : init_args) {
        const auto eq = a.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--init expects STRATEGY=CHECKPOINT, got '" + a + "'");
        given[parse_strategy(a.substr(0, eq))] = a.substr(eq + 1);
    }

    std::map<Strategy, Tensor> inits;
    std::vector<Signal> train;
    for (Strategy s : strategies) {
        if (!is_meta_strategy(s)) {
            inits[s] = random_init_from(c, arch);
            continue;
        }
        if (auto it = given.find(s); it != given.end()) {
            const Checkpoint ck = load_checkpoint(it->second);
            if (!(ck.arch == arch))
                throw ConfigError("checkpoint for " + std::string(strategy_name(s)) + " has a different arch");
            inits[s] = ck.theta;
            continue;
        }
        if (train.empty())
            train = train_signals_from(c);
        std::ofstream log(dir / (std::string("train_log_") + strategy_name(s) + ".csv"));
        log << "outer_step,outer_loss,wall_ms\n";
        std::cout << "meta-training " << strategy_name(s) << " for " << c.get_uint("meta.outer_steps")
                  << " outer steps\n"
                  << std::flush;
        const MetaState st = train_strategy(c, s, train, &log);
        save_checkpoint((dir / (std::string("init_") + strategy_name(s) + ".ckpt")).string(),
                        make_checkpoint(st, Rng(c.get_uint("seed")).split(streams::meta), c.hash()));
        inits[s] = st.shared.theta;
    }

    std::vector<Episode> episodes;
    for (const auto& s : tests)
        episodes.push_back(episode_from(c, s));

    const std::size_t jobs = strategies.size() * episodes.size();
    std::vector<MetricTable> results(jobs);
    parallel_for(jobs, [&](std::size_t j) {
        const Strategy s = strategies[j / episodes.size()];
        const std::size_t e = j % episodes.size();
        const Rng rng = Rng(c.get_uint("seed")).split(streams::adapt).split(e);
        results[j] = run_strategy(strategy_from(c, s), episodes[e], arch, inits.at(s), steps, rng).table;
    });
    MetricTable merged;
    for (const auto& t : results)
        merged.append(t);
    merged.write_csv((dir / "compare.csv").string());

    std::cout << "median PSNR at step " << steps.back() << ":\n";
    for (Strategy s : strategies) {
        std::vector<double> v;
        for (const auto& row : merged.select(strategy_name(s)))
            if (row.step == steps.back())
                v.push_back(row.psnr_db);
        std::sort(v.begin(), v.end());
        const double med = v.empty() ? 0.0 : (v[(v.size() - 1) / 2] + v[v.size() / 2]) / 2;
        std::printf("  %-9s %8.3f dB\n", strategy_name(s), med);
    }
    std::cout << "wrote " << (dir / "compare.csv").string() << "\n";
    return 0;
}

int cmd_inspect(const std::string& ckpt, const std::string& config_path, std::size_t modules)
{
    FieldArch arch;
    std::optional<Checkpoint> ck;
    if (!ckpt.empty()) {
        ck = load_checkpoint(ckpt);
        arch = ck->arch;
    } else {
        arch = arch_from(load_config(config_path, std::nullopt));
    }
    const std::size_t p = param_count(arch);
    std::cout << "arch: " << describe(arch) << "\n";
    std::cout << "layers: " << arch.n_layers << "\nhidden: " << arch.hidden << "\nd_in: " << arch.d_in
              << "\nd_out: " << arch.d_out << "\n";
    std::cout << "params: " << p << "\n";
    for (const auto& l : layer_layout(arch))
        std::cout << "  layer " << l.fan_in << "x" << l.fan_out << ": " << (l.end() - l.begin()) << "\n";
    if (modules > 1)
        std::cout << "params x " << modules << " modules: " << p * modules << "\n";
    if (ck) {
        std::cout << "outer_step: " << ck->outer_step << "\n";
        std::cout << "stored modules: " << ck->modules.size() << "\n";
        std::cout << "momentum buffer: " << (ck->velocity.size() ? "yes" : "no") << "\n";
        std::cout << "rng: seed " << ck->rng_seed << " stream " << ck->rng_stream << " counter " << ck->rng_counter
                  << "\n";
        std::cout << "config hash: " << hex(ck->config_hash) << "\n";
    }
    return 0;
}

int cmd_selftest(std::uint64_t seed)
{
    bool ok = true;
    for (const auto& r : run_selftest(seed)) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Meta-continual learning of neural fields"};
    app.require_subcommand(1);
    app.name("mclnf");

    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;

    auto* mt = app.add_subcommand("meta-train", "meta-train a shared initialization");
    std::string resume;
    bool force = false;
    mt->add_option("--config", config_path, "run config")->required()->check(CLI::ExistingFile);
    mt->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
    mt->add_flag("--force", force, "resume even when the config hash differs");
    mt->add_option("--out", out, "output directory (default out.dir)");
    mt->add_option("--seed", seed, "override the config seed");

    auto* ad = app.add_subcommand("adapt", "test-time optimization of one signal");
    std::string ckpt;
    std::string signal;
    std::string strategy;
    std::string steps;
    ad->add_option("--ckpt", ckpt, "meta-trained checkpoint")->check(CLI::ExistingFile);
    ad->add_option("--signal", signal, "signal path or synthetic:<family>[:<index>[:<size>]]")->required();
    ad->add_option("--strategy", strategy, "strategy name (default: config strategy)");
    ad->add_option("--steps", steps, "comma-separated eval steps (default: config eval.steps)");
    ad->add_option("--config", config_path, "run config")->check(CLI::ExistingFile);
    ad->add_option("--out", out, "output directory (default out.dir)");
    ad->add_option("--seed", seed, "override the config seed");

    auto* cmp = app.add_subcommand("compare", "strategy sweep over held-out signals");
    std::vector<std::string> inits;
    cmp->add_option("--config", config_path, "run config")->required()->check(CLI::ExistingFile);
    cmp->add_option("--init", inits, "STRATEGY=CHECKPOINT, skips meta-training that strategy");
    cmp->add_option("--out", out, "output directory (default out.dir)");
    cmp->add_option("--seed", seed, "override the config seed");

    auto* ins = app.add_subcommand("inspect", "print architecture and parameter counts");
    std::size_t modules = 1;
    auto* ins_ck = ins->add_option("--ckpt", ckpt, "checkpoint")->check(CLI::ExistingFile);
    auto* ins_cfg = ins->add_option("--config", config_path, "config (arch keys)")->check(CLI::ExistingFile);
    ins->add_option("--modules", modules, "also print the total for this many modules");
    ins_ck->excludes(ins_cfg);

    auto* st = app.add_subcommand("selftest", "run the built-in oracle checks");
    std::uint64_t st_seed = 0;
    st->add_option("--seed", st_seed, "seed");

    auto* sc = app.add_subcommand("schema", "print every config key with its default");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*mt)
            return cmd_meta_train(config_path, resume, force, out, seed);
        if (*ad)
            return cmd_adapt(config_path, ckpt, signal, strategy, steps, out, seed);
        if (*cmp)
            return cmd_compare(config_path, inits, out, seed);
        if (*ins) {
            if (ckpt.empty() && config_path.empty())
                throw ConfigError("inspect needs --ckpt or --config");
            return cmd_inspect(ckpt, config_path, modules);
        }
        if (*st)
            return cmd_selftest(st_seed);
        if (*sc) {
            write_schema(std::cout);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "mclnf: error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
