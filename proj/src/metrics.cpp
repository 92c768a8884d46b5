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

#include "mclnf/metrics.hpp"

#include "mclnf/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace mclnf {

double psnr(const Tensor& pred, const Tensor& target, double span)
{
    if (pred.shape() != target.shape()) {
        throw DimensionError("psnr: shapes " + shape_string(pred.shape()) + " and " + shape_string(target.shape()) +
                             " differ");
    }
    require(pred.size() > 0, "psnr of empty tensors");
    double se = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = (pred[i] - target[i]) / span;
        se += d * d;
    }
    if (se == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return -10.0 * std::log10(se / static_cast<double>(pred.size()));
}

std::string format_double(double v)
{
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s)
{
    if (s == "inf") {
        return std::numeric_limits<double>::infinity();
    }
    if (s == "-inf") {
        return -std::numeric_limits<double>::infinity();
    }
    if (s == "nan") {
        return std::numeric_limits<double>::quiet_NaN();
    }
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError("not a number: '" + s + "'");
    }
    return v;
}

void MetricTable::add(MetricRow row)
{
    require(row.strategy.find_first_of(",;\n") == std::string::npos &&
                row.signal_id.find_first_of(",;\n") == std::string::npos,
            "metric labels may not contain separators");
    for (auto it = rows_.rbegin(); it != rows_.rend(); ++it) {
        if (it->strategy == row.strategy && it->signal_id == row.signal_id) {
            require(row.step > it->step, "metric steps must increase for " + row.strategy + "/" + row.signal_id);
            break;
        }
    }
    rows_.push_back(std::move(row));
}

void MetricTable::append(const MetricTable& other)
{
    for (const auto& r : other.rows_) {
        add(r);
    }
}

std::vector<MetricRow> MetricTable::select(const std::string& strategy) const
{
    std::vector<MetricRow> out;
    for (const auto& r : rows_) {
        if (r.strategy == strategy) {
            out.push_back(r);
        }
    }
    return out;
}

void MetricTable::write_csv(std::ostream& out) const
{
    out << header << '\n';
    for (const auto& r : rows_) {
        out << r.strategy << ',' << r.signal_id << ',' << r.step << ',' << format_double(r.psnr_db) << ',';
        for (std::size_t i = 0; i < r.task_psnr.size(); ++i) {
            out << (i ? ";" : "") << format_double(r.task_psnr[i]);
        }
        out << ',' << format_double(r.wall_ms) << '\n';
    }
}

void MetricTable::write_csv(const std::string& path) const
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    write_csv(out);
    if (!out) {
        throw IoError("short write to " + path);
    }
}

MetricTable MetricTable::read_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != header) {
        throw IoError("metrics csv: unexpected header");
    }
    MetricTable t;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) {
            cols.push_back(c);
        }
        if (line.back() == ',') {
            cols.emplace_back();
        }
        if (cols.size() != 6) {
            throw IoError("metrics csv line " + std::to_string(lineno) + ": expected 6 columns");
        }
        MetricRow r;
        r.strategy = cols[0];
        r.signal_id = cols[1];
        r.step = static_cast<std::size_t>(parse_double(cols[2]));
        r.psnr_db = parse_double(cols[3]);
        std::stringstream ts(cols[4]);
        while (std::getline(ts, c, ';')) {
            r.task_psnr.push_back(parse_double(c));
        }
        r.wall_ms = parse_double(cols[5]);
        t.add(std::move(r));
    }
    return t;
}

MetricTable MetricTable::read_csv_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    return read_csv(in);
}

} // namespace mclnf
