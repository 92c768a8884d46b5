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

// Signals sampled on regular grids and the task streams cut from them.
//
// A signal with grid shape (n_0, ..., n_{d-1}) and c channels stores its
// samples as a (prod n_a, c) tensor in row-major grid order. Sample i on
// axis a of length n sits at coordinate -1 + 2 i / (n - 1), or 0 when n = 1.

#include "mclnf/rng.hpp"
#include "mclnf/tensor.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mclnf {

enum class SignalKind { Image, Video, Audio, Synthetic };

const char* kind_name(SignalKind kind);

struct Signal {
    SignalKind kind = SignalKind::Synthetic;
    // Grid shape: images (H, W), videos (T, H, W), audio (N).
    Shape grid;
    std::size_t channels = 1;
    Tensor values; // (samples, channels)
    std::string id;
    // Free-form generator parameters, empty for loaded data.
    std::string note;
    // Values are kept within [value_lo, value_hi].
    double value_lo = 0.0;
    double value_hi = 1.0;

    [[nodiscard]] std::size_t samples() const { return shape_size(grid); }
    [[nodiscard]] std::size_t dims() const { return grid.size(); }
    void validate() const;
};

double grid_coordinate(std::size_t i, std::size_t n);

// (samples, dims) coordinates in grid order.
Tensor grid_coordinates(const Shape& grid);

// Axis-aligned closed box in coordinate space.
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    [[nodiscard]] bool contains(std::span<const double> x) const;
    // Squared distance from x to the box, 0 inside.
    [[nodiscard]] double distance2(std::span<const double> x) const;
    static Box full(std::size_t dims);
};

struct Samples {
    Tensor coords;  // (m, dims)
    Tensor targets; // (m, channels)
    // Position of each row in the source signal's sample order.
    std::vector<std::size_t> index;

    [[nodiscard]] std::size_t size() const { return index.size(); }
    [[nodiscard]] bool empty() const { return index.empty(); }
};

// Rows `which` of a (coords, targets) pool.
Samples gather(const Samples& pool, std::span<const std::size_t> which);

struct FieldTask {
    std::size_t index = 0;
    Box region;
    Samples context;
    Samples query;
};

enum class SplitKind { Spatial, Temporal, Resolution };

struct Episode {
    std::vector<FieldTask> tasks;
    std::string signal_id;
    SplitKind split = SplitKind::Spatial;
    Shape grid;
    std::size_t channels = 1;
    // Value range of the source signal, for PSNR.
    double value_lo = 0.0;
    double value_hi = 1.0;

    [[nodiscard]] std::size_t size() const { return tasks.size(); }
};

// Splitters put every region sample in both context and query (full
// supervision); sample_context_query() subsamples afterwards.

// t contiguous slabs along `axis`; the last slab absorbs any remainder.
Episode split_spatial(const Signal& signal, std::size_t t, std::size_t axis);
// t contiguous chunks along the time axis (axis 0) of a video or audio clip.
Episode split_temporal(const Signal& signal, std::size_t t);
// 2x2 phase decimation of an image into four sub-images over the full domain.
Episode split_resolution(const Signal& signal, std::size_t t = 4);

// Targets of all tasks' contexts written back to their sample positions.
Tensor reassemble(const Episode& episode);

enum class QueryMode { HeldOut, Full };

// Draws m context samples without replacement from the task's context pool;
// the query becomes the remainder (HeldOut) or the whole pool (Full).
FieldTask sample_context_query(const FieldTask& task, std::size_t m, Rng& rng, QueryMode mode = QueryMode::HeldOut);

enum class Family { RandomFourier1d, Gabor2d };

const char* family_name(Family family);
Family parse_family(const std::string& name);

// n i.i.d. signals. `size` is the grid extent: samples for 1-d, side for 2-d.
std::vector<Signal> synth_family(Rng& rng, Family family, std::size_t n, std::size_t size = 0);

// First round(frac * n) items for training, the rest held out.
template <class T>
std::pair<std::vector<T>, std::vector<T>> split_train_test(const std::vector<T>& items, double frac = 0.7)
{
    const auto cut = static_cast<std::size_t>(frac * static_cast<double>(items.size()) + 0.5);
    const auto mid = items.begin() + static_cast<std::ptrdiff_t>(std::min(cut, items.size()));
    return {std::vector<T>(items.begin(), mid), std::vector<T>(mid, items.end())};
}

} // namespace mclnf
