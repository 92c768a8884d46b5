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

#include "mclnf/modular.hpp"

#include "mclnf/errors.hpp"

#include <atomic>
#include <cmath>

namespace mclnf {

namespace {

std::atomic<std::size_t> g_gate_warnings{0};

double volume(const Box& b)
{
    double v = 1.0;
    for (std::size_t a = 0; a < b.lo.size(); ++a) {
        v *= b.hi[a] - b.lo[a];
    }
    return v;
}

} // namespace

void SharedInit::validate() const
{
    if (theta.size() != param_count(arch)) {
        throw DimensionError("shared init has " + std::to_string(theta.size()) + " parameters, architecture needs " +
                             std::to_string(param_count(arch)));
    }
}

bool boxes_overlap(const Box& a, const Box& b)
{
    require(a.lo.size() == b.lo.size(), "boxes of different dimension");
    for (std::size_t i = 0; i < a.lo.size(); ++i) {
        if (a.hi[i] <= b.lo[i] || b.hi[i] <= a.lo[i]) {
            return false;
        }
    }
    return true;
}

RegionMap region_map(const Episode& episode, std::size_t n_modules)
{
    std::vector<Box> regions;
    for (const auto& task : episode.tasks) {
        regions.push_back(task.region);
    }
    return region_map(episode.split, regions, n_modules);
}

RegionMap region_map(SplitKind split, const std::vector<Box>& task_regions, std::size_t n_modules)
{
    const std::size_t t = task_regions.size();
    require(t >= 1, "region map of an empty episode");
    const std::size_t dims = task_regions[0].lo.size();
    RegionMap map;
    if (split == SplitKind::Resolution || n_modules == 1) {
        map.boxes.push_back(Box::full(dims));
        map.task_module.assign(t, 0);
        return map;
    }
    if (n_modules == 0) {
        n_modules = t;
    }
    require(n_modules <= t && t % n_modules == 0,
            "module count " + std::to_string(n_modules) + " must divide the task count " + std::to_string(t));
    const std::size_t per = t / n_modules;
    for (std::size_t m = 0; m < n_modules; ++m) {
        Box merged = task_regions[m * per];
        for (std::size_t j = m * per; j < (m + 1) * per; ++j) {
            const Box& r = task_regions[j];
            for (std::size_t a = 0; a < dims; ++a) {
                merged.lo[a] = std::min(merged.lo[a], r.lo[a]);
                merged.hi[a] = std::max(merged.hi[a], r.hi[a]);
            }
            map.task_module.push_back(m);
        }
        map.boxes.push_back(std::move(merged));
    }
    return map;
}

ModularField ModularField::instantiate(const SharedInit& shared, std::vector<Box> regions)
{
    shared.validate();
    require(!regions.empty(), "modular field needs at least one region");
    ModularField f;
    f.arch_ = shared.arch;
    f.shared_ = shared.theta;
    for (const auto& r : regions) {
        f.expand(r);
    }
    return f;
}

void ModularField::expand(const Box& region)
{
    require(region.lo.size() == arch_.d_in && region.hi.size() == arch_.d_in,
            "region dimension must match the input dimension");
    for (std::size_t a = 0; a < region.lo.size(); ++a) {
        require(region.lo[a] <= region.hi[a], "region with lo > hi");
    }
    for (std::size_t i = 0; i < regions_.size(); ++i) {
        if (boxes_overlap(regions_[i], region)) {
            throw ContractError("new region overlaps region " + std::to_string(i));
        }
    }
    regions_.push_back(region);
    modules_.push_back(shared_);
}

std::vector<std::size_t> ModularField::gate(const Tensor& coords) const
{
    if (coords.rank() != 2 || coords.cols() != arch_.d_in) {
        throw DimensionError("gate: coords must be (m, " + std::to_string(arch_.d_in) + ")");
    }
    const std::size_t d = arch_.d_in;
    std::vector<std::size_t> idx(coords.rows());
    std::size_t outside = 0;
    for (std::size_t r = 0; r < coords.rows(); ++r) {
        const std::span<const double> x(coords.ptr() + r * d, d);
        std::size_t pick = regions_.size();
        for (std::size_t i = 0; i < regions_.size(); ++i) {
            if (regions_[i].contains(x)) {
                pick = i;
                break;
            }
        }
        if (pick == regions_.size()) {
            ++outside;
            double best = INFINITY;
            for (std::size_t i = 0; i < regions_.size(); ++i) {
                const double d2 = regions_[i].distance2(x);
                if (d2 < best) {
                    best = d2;
                    pick = i;
                }
            }
        }
        idx[r] = pick;
    }
    if (outside) {
        g_gate_warnings.fetch_add(outside, std::memory_order_relaxed);
    }
    return idx;
}

Tensor ModularField::compose_predict(const Tensor& coords) const
{
    const auto idx = gate(coords);
    Tensor out(Shape{coords.rows(), arch_.d_out});
    for (std::size_t i = 0; i < modules_.size(); ++i) {
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] == i) {
                rows.push_back(r);
            }
        }
        if (rows.empty()) {
            continue;
        }
        const Tensor part = predict(arch_, modules_[i], coords.rows_subset(rows));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            for (std::size_t c = 0; c < arch_.d_out; ++c) {
                out.at(rows[k], c) = part.at(k, c);
            }
        }
    }
    return out;
}

bool ModularField::covers(const Box& domain) const
{
    double total = 0.0;
    for (const auto& r : regions_) {
        for (std::size_t a = 0; a < r.lo.size(); ++a) {
            if (r.lo[a] < domain.lo[a] || r.hi[a] > domain.hi[a]) {
                return false;
            }
        }
        total += volume(r);
    }
    return std::abs(total - volume(domain)) <= 1e-12 * volume(domain);
}

std::size_t gate_warnings()
{
    return g_gate_warnings.load(std::memory_order_relaxed);
}

} // namespace mclnf
