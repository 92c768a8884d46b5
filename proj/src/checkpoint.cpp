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

#include "mclnf/checkpoint.hpp"

#include "mclnf/config.hpp"
#include "mclnf/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mclnf {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out.push_back(v); }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            out.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i)
            out.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void doubles(std::span<const double> v)
    {
        u64(v.size());
        for (double d : v)
            f64(d);
    }
    std::vector<unsigned char> out;
};

class Reader {
public:
    explicit Reader(const std::vector<unsigned char>& b, std::size_t end) : bytes(b), limit(end) {}

    void need(std::size_t n)
    {
        if (limit - pos < n)
            throw IoError("checkpoint truncated");
    }
    std::uint8_t u8()
    {
        need(1);
        return bytes[pos++];
    }
    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(bytes[pos++]) << (8 * i);
        return v;
    }
    std::uint64_t u64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(bytes[pos++]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::vector<double> doubles()
    {
        const std::uint64_t n = u64();
        if (n > (limit - pos) / 8)
            throw IoError("checkpoint array length out of range");
        std::vector<double> v(n);
        for (auto& d : v)
            d = f64();
        return v;
    }

    const std::vector<unsigned char>& bytes;
    std::size_t limit;
    std::size_t pos = 0;
};

Tensor as_tensor(std::vector<double> v)
{
    if (v.empty())
        return {};
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

} // namespace

Checkpoint make_checkpoint(const MetaState& state, const Rng& rng, std::uint64_t config_hash)
{
    Checkpoint ck;
    ck.arch = state.shared.arch;
    ck.theta = state.shared.theta;
    ck.velocity = state.velocity;
    ck.outer_step = state.outer_step;
    ck.rng_seed = rng.seed();
    ck.rng_stream = rng.stream();
    ck.rng_counter = rng.counter();
    ck.config_hash = config_hash;
    return ck;
}

void restore_state(const Checkpoint& ck, MetaState& state)
{
    if (!(ck.arch == state.shared.arch))
        throw ConfigError("checkpoint architecture " + describe(ck.arch) + " does not match config " +
                          describe(state.shared.arch));
    state.shared.theta = ck.theta;
    state.velocity = ck.velocity;
    state.outer_step = ck.outer_step;
}

void check_resume(const Checkpoint& ck, std::uint64_t config_hash, bool force)
{
    if (ck.config_hash != config_hash && !force)
        throw ConfigError("checkpoint was written with a different config (hash mismatch); use --force to resume anyway");
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck)
{
    if (ck.theta.size() != param_count(ck.arch))
        throw DimensionError("checkpoint theta does not match its architecture");
    if (ck.regions.size() != ck.modules.size())
        throw ContractError("checkpoint regions and modules disagree");
    Writer w;
    for (int i = 0; i < 8; ++i)
        w.u8(static_cast<std::uint8_t>(Checkpoint::magic[i]));
    w.u32(Checkpoint::version);
    w.u64(ck.arch.n_layers);
    w.u64(ck.arch.hidden);
    w.u64(ck.arch.d_in);
    w.u64(ck.arch.d_out);
    w.u8(ck.arch.activation == Activation::Sine ? 0 : 1);
    w.f64(ck.arch.omega0);
    w.u64(ck.arch.pe_frequencies);
    w.u64(ck.outer_step);
    w.u64(ck.rng_seed);
    w.u64(ck.rng_stream);
    w.u64(ck.rng_counter);
    w.u64(ck.config_hash);
    w.doubles(ck.theta.data());
    w.doubles(ck.velocity.data());
    w.u64(ck.modules.size());
    for (std::size_t m = 0; m < ck.modules.size(); ++m) {
        w.doubles(ck.regions[m].lo);
        w.doubles(ck.regions[m].hi);
        w.doubles(ck.modules[m].data());
    }
    w.u64(fnv1a64(w.out));
    return w.out;
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes)
{
    if (bytes.size() < 8 + 4 + 8 || std::memcmp(bytes.data(), Checkpoint::magic, 8) != 0)
        throw IoError("not a checkpoint (bad magic)");
    const std::size_t body = bytes.size() - 8;
    Reader tail(bytes, bytes.size());
    tail.pos = body;
    if (tail.u64() != fnv1a64(std::span(bytes.data(), body)))
        throw IoError("checkpoint checksum mismatch");
    Reader r(bytes, body);
    r.pos = 8;
    const std::uint32_t version = r.u32();
    if (version != Checkpoint::version)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.arch.n_layers = r.u64();
    ck.arch.hidden = r.u64();
    ck.arch.d_in = r.u64();
    ck.arch.d_out = r.u64();
    const std::uint8_t act = r.u8();
    if (act > 1)
        throw IoError("checkpoint has an unknown activation code");
    ck.arch.activation = act == 0 ? Activation::Sine : Activation::Relu;
    ck.arch.omega0 = r.f64();
    ck.arch.pe_frequencies = r.u64();
    try {
        ck.arch.validate();
    } catch (const Error& e) {
        throw IoError(std::string("checkpoint architecture invalid: ") + e.what());
    }
    ck.outer_step = r.u64();
    ck.rng_seed = r.u64();
    ck.rng_stream = r.u64();
    ck.rng_counter = r.u64();
    ck.config_hash = r.u64();
    ck.theta = as_tensor(r.doubles());
    ck.velocity = as_tensor(r.doubles());
    const std::size_t p = param_count(ck.arch);
    if (ck.theta.size() != p)
        throw IoError("checkpoint parameter count does not match its architecture");
    if (ck.velocity.size() != 0 && ck.velocity.size() != p)
        throw IoError("checkpoint velocity has the wrong size");
    const std::uint64_t n_modules = r.u64();
    if (n_modules > (body - r.pos) / 24)
        throw IoError("checkpoint module count out of range");
    for (std::uint64_t m = 0; m < n_modules; ++m) {
        Box b;
        b.lo = r.doubles();
        b.hi = r.doubles();
        if (b.lo.size() != ck.arch.d_in || b.hi.size() != ck.arch.d_in)
            throw IoError("checkpoint region has the wrong dimension");
        ck.regions.push_back(std::move(b));
        ck.modules.push_back(as_tensor(r.doubles()));
        if (ck.modules.back().size() != p)
            throw IoError("checkpoint module has the wrong size");
    }
    if (r.pos != body)
        throw IoError("checkpoint has trailing bytes");
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck)
{
    const auto bytes = encode_checkpoint(ck);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot write checkpoint '" + path + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw IoError("short write on checkpoint '" + path + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("cannot move checkpoint into place at '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open checkpoint '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

} // namespace mclnf
