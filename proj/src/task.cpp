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

#include "mclnf/task.hpp"

#include "mclnf/errors.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace mclnf {

const char* kind_name(SignalKind kind)
{
    switch (kind) {
    case SignalKind::Image:
        return "image";
    case SignalKind::Video:
        return "video";
    case SignalKind::Audio:
        return "audio";
    case SignalKind::Synthetic:
        return "synthetic";
    }
    return "?";
}

void Signal::validate() const
{
    require(!grid.empty() && samples() > 0, "signal " + id + ": empty grid");
    if (values.rank() != 2 || values.rows() != samples() || values.cols() != channels) {
        throw DimensionError("signal " + id + ": values " + shape_string(values.shape()) + " do not match grid " +
                             shape_string(grid) + " x " + std::to_string(channels));
    }
    for (double v : values.data()) {
        if (!(v >= value_lo && v <= value_hi)) {
            throw ContractError("signal " + id + ": value outside the normalization range");
        }
    }
}

double grid_coordinate(std::size_t i, std::size_t n)
{
    if (n <= 1) {
        return 0.0;
    }
    return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

Tensor grid_coordinates(const Shape& grid)
{
    const std::size_t total = shape_size(grid);
    const std::size_t d = grid.size();
    Tensor out(Shape{total, d});
    for (std::size_t s = 0; s < total; ++s) {
        std::size_t rest = s;
        for (std::size_t a = d; a-- > 0;) {
            out.at(s, a) = grid_coordinate(rest % grid[a], grid[a]);
            rest /= grid[a];
        }
    }
    return out;
}

bool Box::contains(std::span<const double> x) const
{
    for (std::size_t a = 0; a < lo.size(); ++a) {
        if (x[a] < lo[a] || x[a] > hi[a]) {
            return false;
        }
    }
    return true;
}

double Box::distance2(std::span<const double> x) const
{
    double d2 = 0.0;
    for (std::size_t a = 0; a < lo.size(); ++a) {
        const double d = x[a] < lo[a] ? lo[a] - x[a] : (x[a] > hi[a] ? x[a] - hi[a] : 0.0);
        d2 += d * d;
    }
    return d2;
}

Box Box::full(std::size_t dims)
{
    return Box{std::vector<double>(dims, -1.0), std::vector<double>(dims, 1.0)};
}

Samples gather(const Samples& pool, std::span<const std::size_t> which)
{
    const std::size_t dims = pool.coords.cols();
    const std::size_t ch = pool.targets.cols();
    Samples out{Tensor(Shape{which.size(), dims}), Tensor(Shape{which.size(), ch}), {}};
    out.index.reserve(which.size());
    for (std::size_t r = 0; r < which.size(); ++r) {
        const std::size_t src = which[r];
        require(src < pool.size(), "gather: row out of range");
        for (std::size_t a = 0; a < dims; ++a) {
            out.coords.at(r, a) = pool.coords.at(src, a);
        }
        for (std::size_t c = 0; c < ch; ++c) {
            out.targets.at(r, c) = pool.targets.at(src, c);
        }
        out.index.push_back(pool.index[src]);
    }
    return out;
}

namespace {

Samples whole(const Signal& signal)
{
    Samples all{grid_coordinates(signal.grid), signal.values, {}};
    all.index.resize(signal.samples());
    for (std::size_t i = 0; i < all.index.size(); ++i) {
        all.index[i] = i;
    }
    return all;
}

Episode along_axis(const Signal& signal, std::size_t t, std::size_t axis, SplitKind kind)
{
    signal.validate();
    require(t >= 1, "split: t must be >= 1");
    require(axis < signal.dims(), "split: axis out of range");
    const std::size_t n = signal.grid[axis];
    require(n >= t, "split: " + std::to_string(n) + " samples along the axis cannot make " + std::to_string(t) +
                        " tasks");
    std::size_t stride = 1;
    for (std::size_t a = axis + 1; a < signal.dims(); ++a) {
        stride *= signal.grid[a];
    }
    const std::size_t chunk = n / t;
    const Samples all = whole(signal);
    std::vector<std::vector<std::size_t>> members(t);
    for (std::size_t s = 0; s < all.size(); ++s) {
        const std::size_t pos = (s / stride) % n;
        members[std::min(pos / chunk, t - 1)].push_back(s);
    }

    Episode ep{{}, signal.id, kind, signal.grid, signal.channels, signal.value_lo, signal.value_hi};
    for (std::size_t j = 0; j < t; ++j) {
        const std::size_t first = j * chunk;
        const std::size_t last = j + 1 == t ? n - 1 : (j + 1) * chunk - 1;
        Box region = Box::full(signal.dims());
        if (first > 0) {
            region.lo[axis] = 0.5 * (grid_coordinate(first - 1, n) + grid_coordinate(first, n));
        }
        if (last + 1 < n) {
            region.hi[axis] = 0.5 * (grid_coordinate(last, n) + grid_coordinate(last + 1, n));
        }
        Samples s = gather(all, members[j]);
        ep.tasks.push_back({j, std::move(region), s, s});
    }
    return ep;
}

} // namespace

Episode split_spatial(const Signal& signal, std::size_t t, std::size_t axis)
{
    return along_axis(signal, t, axis, SplitKind::Spatial);
}

Episode split_temporal(const Signal& signal, std::size_t t)
{
    require(signal.kind == SignalKind::Video || signal.kind == SignalKind::Audio,
            "temporal split needs a video or audio signal");
    return along_axis(signal, t, 0, SplitKind::Temporal);
}

Episode split_resolution(const Signal& signal, std::size_t t)
{
    signal.validate();
    require(t == 4, "resolution split produces exactly four tasks");
    require(signal.dims() == 2, "resolution split needs a 2-d grid");
    const std::size_t w = signal.grid[1];
    const Samples all = whole(signal);
    std::vector<std::vector<std::size_t>> members(4);
    for (std::size_t s = 0; s < all.size(); ++s) {
        const std::size_t r = s / w;
        const std::size_t c = s % w;
        members[2 * (r % 2) + c % 2].push_back(s);
    }
    Episode ep{{}, signal.id, SplitKind::Resolution, signal.grid, signal.channels, signal.value_lo, signal.value_hi};
    for (std::size_t j = 0; j < 4; ++j) {
        require(!members[j].empty(), "resolution split: image too small for phase " + std::to_string(j));
        Samples s = gather(all, members[j]);
        ep.tasks.push_back({j, Box::full(2), s, s});
    }
    return ep;
}

Tensor reassemble(const Episode& episode)
{
    Tensor out(Shape{shape_size(episode.grid), episode.channels});
    for (const auto& task : episode.tasks) {
        for (std::size_t r = 0; r < task.context.size(); ++r) {
            for (std::size_t c = 0; c < episode.channels; ++c) {
                out.at(task.context.index[r], c) = task.context.targets.at(r, c);
            }
        }
    }
    return out;
}

FieldTask sample_context_query(const FieldTask& task, std::size_t m, Rng& rng, QueryMode mode)
{
    const std::size_t n = task.context.size();
    require(m >= 1, "context size must be >= 1");
    require(m <= n, "context size " + std::to_string(m) + " exceeds the " + std::to_string(n) + " region samples");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    for (std::size_t i = 0; i < m; ++i) {
        std::swap(order[i], order[i + rng.below(n - i)]);
    }
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(m), order.end());
    std::sort(chosen.begin(), chosen.end());
    std::sort(rest.begin(), rest.end());
    FieldTask out{task.index, task.region, gather(task.context, chosen), {}};
    out.query = mode == QueryMode::Full ? task.context : gather(task.context, rest);
    return out;
}

const char* family_name(Family family)
{
    return family == Family::RandomFourier1d ? "random-fourier-1d" : "gabor-2d";
}

Family parse_family(const std::string& name)
{
    if (name == "random-fourier-1d") {
        return Family::RandomFourier1d;
    }
    if (name == "gabor-2d") {
        return Family::Gabor2d;
    }
    throw ConfigError("unknown signal family '" + name + "'");
}

namespace {

Signal fourier_signal(Rng& rng, std::size_t n, std::size_t k_terms)
{
    const double bound = 1.0 / static_cast<double>(k_terms);
    std::vector<double> amp(k_terms), freq(k_terms), phase(k_terms);
    std::string note = "K=" + std::to_string(k_terms);
    for (std::size_t k = 0; k < k_terms; ++k) {
        amp[k] = rng.uniform(-bound, bound);
        freq[k] = rng.uniform(1.0, 8.0);
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        note += " a=" + std::to_string(amp[k]) + " f=" + std::to_string(freq[k]) + " phi=" + std::to_string(phase[k]);
    }
    Signal s;
    s.kind = SignalKind::Synthetic;
    s.grid = {n};
    s.values = Tensor(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n);
        double v = 0.0;
        for (std::size_t k = 0; k < k_terms; ++k) {
            v += amp[k] * std::sin(2.0 * std::numbers::pi * freq[k] * t + phase[k]);
        }
        s.values[i] = v;
    }
    s.value_lo = -1.0;
    s.value_hi = 1.0;
    s.note = note;
    return s;
}

Signal gabor_signal(Rng& rng, std::size_t side)
{
    const double cx = rng.uniform(-0.4, 0.4);
    const double cy = rng.uniform(-0.4, 0.4);
    const double sigma = rng.uniform(0.25, 0.5);
    const double freq = rng.uniform(0.5, 1.5);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amp = rng.uniform(0.3, 0.5);
    Signal s;
    s.kind = SignalKind::Synthetic;
    s.grid = {side, side};
    s.values = Tensor(Shape{side * side, 1});
    const double ct = std::cos(theta);
    const double st = std::sin(theta);
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            const double y = grid_coordinate(r, side) - cy;
            const double x = grid_coordinate(c, side) - cx;
            const double xr = ct * x + st * y;
            const double env = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            s.values[r * side + c] = 0.5 + amp * env * std::cos(2.0 * std::numbers::pi * freq * xr + phase);
        }
    }
    s.note = "cx=" + std::to_string(cx) + " cy=" + std::to_string(cy) + " sigma=" + std::to_string(sigma) +
             " f=" + std::to_string(freq) + " theta=" + std::to_string(theta) + " phi=" + std::to_string(phase) +
             " amp=" + std::to_string(amp);
    return s;
}

} // namespace

std::vector<Signal> synth_family(Rng& rng, Family family, std::size_t n, std::size_t size)
{
    require(n >= 1, "synth_family: n must be >= 1");
    Rng base(rng.next_u64(), 0);
    std::vector<Signal> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng r = base.split(i);
        Signal s = family == Family::RandomFourier1d ? fourier_signal(r, size ? size : 256, 8)
                                                     : gabor_signal(r, size ? size : 16);
        char id[32];
        std::snprintf(id, sizeof id, "%s-%04zu", family == Family::RandomFourier1d ? "fourier" : "gabor", i);
        s.id = id;
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace mclnf
