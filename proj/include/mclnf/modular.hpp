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

// One parameter module per coordinate region, all started from the same
// shared vector, with a hard one-hot gate picking the module for each query.

#include "mclnf/field.hpp"
#include "mclnf/task.hpp"

#include <cstddef>
#include <vector>

namespace mclnf {

struct SharedInit {
    FieldArch arch;
    Tensor theta;

    void validate() const;
};

// Interiors of closed boxes intersect.
bool boxes_overlap(const Box& a, const Box& b);

// Modules and the task each region serves.
struct RegionMap {
    std::vector<Box> boxes;
    // task index -> module index
    std::vector<std::size_t> task_module;
};

// One module per task for slab splits (n_modules = 0 or t), consecutive tasks
// merged for smaller counts that divide t. Resolution splits share a single
// module because each sub-image spans the whole domain.
RegionMap region_map(SplitKind split, const std::vector<Box>& task_regions, std::size_t n_modules = 0);
RegionMap region_map(const Episode& episode, std::size_t n_modules = 0);

class ModularField {
public:
    static ModularField instantiate(const SharedInit& shared, std::vector<Box> regions);

    [[nodiscard]] const FieldArch& arch() const { return arch_; }
    [[nodiscard]] std::size_t size() const { return modules_.size(); }
    [[nodiscard]] const std::vector<Box>& regions() const { return regions_; }
    [[nodiscard]] const Tensor& module(std::size_t i) const { return modules_.at(i); }
    Tensor& module(std::size_t i) { return modules_.at(i); }
    [[nodiscard]] const std::vector<Tensor>& modules() const { return modules_; }
    [[nodiscard]] const Tensor& shared() const { return shared_; }
    [[nodiscard]] std::size_t total_params() const { return modules_.size() * shared_.size(); }

    // First region containing each row; rows outside every region go to
    // the nearest one and bump gate_warnings().
    [[nodiscard]] std::vector<std::size_t> gate(const Tensor& coords) const;
    [[nodiscard]] Tensor compose_predict(const Tensor& coords) const;

    // Appends a module initialized from the shared vector.
    void expand(const Box& region);

    // True when the regions tile `domain` (volume check, interiors disjoint).
    [[nodiscard]] bool covers(const Box& domain) const;

private:
    FieldArch arch_;
    Tensor shared_;
    std::vector<Tensor> modules_;
    std::vector<Box> regions_;
};

std::size_t gate_warnings();

} // namespace mclnf
