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

// PSNR and the PSNR-vs-step table written as CSV.

#include "mclnf/tensor.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace mclnf {

// -10 log10(MSE / span^2); +inf for an exact match. `span` is the width of
// the value range, 1 for [0, 1] data and 2 for [-1, 1] audio.
double psnr(const Tensor& pred, const Tensor& target, double span = 1.0);

// Shortest round-trip decimal form; "inf", "-inf" and "nan" spelled out.
std::string format_double(double v);
double parse_double(const std::string& s);

struct MetricRow {
    std::string strategy;
    std::string signal_id;
    std::size_t step = 0;
    double psnr_db = 0.0;
    std::vector<double> task_psnr;
    double wall_ms = 0.0;
};

class MetricTable {
public:
    static constexpr const char* header = "strategy,signal_id,step,psnr_db,task_psnr,wall_ms";

    // Steps must strictly increase within each (strategy, signal) pair.
    void add(MetricRow row);
    void append(const MetricTable& other);

    [[nodiscard]] const std::vector<MetricRow>& rows() const { return rows_; }
    [[nodiscard]] std::size_t size() const { return rows_.size(); }
    [[nodiscard]] std::vector<MetricRow> select(const std::string& strategy) const;

    void write_csv(std::ostream& out) const;
    void write_csv(const std::string& path) const;
    static MetricTable read_csv(std::istream& in);
    static MetricTable read_csv_file(const std::string& path);

private:
    std::vector<MetricRow> rows_;
};

} // namespace mclnf
