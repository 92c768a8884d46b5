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

#include "mclnf/tensor.hpp"

#include "mclnf/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace mclnf {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            s += ", ";
        }
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_size(shape_) != data_.size()) {
        throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::scalar(double v)
{
    return Tensor(Shape{}, std::vector<double>{v});
}

Tensor Tensor::vector(std::vector<double> v)
{
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
{
    return Tensor(Shape{rows, cols}, std::move(data));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw DimensionError("ragged matrix literal");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return matrix(r, c, std::move(data));
}

std::size_t Tensor::rows() const
{
    return shape_.empty() ? 1 : shape_[0];
}

std::size_t Tensor::cols() const
{
    if (shape_.size() <= 1) {
        return 1;
    }
    return std::accumulate(shape_.begin() + 1, shape_.end(), std::size_t{1}, std::multiplies<>());
}

double Tensor::item() const
{
    if (data_.size() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::row(std::size_t r) const
{
    const std::size_t c = cols();
    if (r >= rows()) {
        throw DimensionError("row index out of range");
    }
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(r * c),
                            data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
    return matrix(1, c, std::move(out));
}

Tensor Tensor::rows_subset(std::span<const std::size_t> index) const
{
    const std::size_t c = cols();
    std::vector<double> out(index.size() * c);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= rows()) {
            throw DimensionError("row index out of range");
        }
        std::memcpy(out.data() + i * c, data_.data() + index[i] * c, c * sizeof(double));
    }
    return matrix(index.size(), c, std::move(out));
}

bool Tensor::all_finite() const
{
    // exponent all ones means inf or nan; branch-free so it vectorizes
    std::uint64_t bad = 0;
    for (const double v : data_) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        bad |= static_cast<std::uint64_t>(((bits >> 52) & 0x7ff) == 0x7ff);
    }
    return bad == 0;
}

bool Tensor::bitwise_equal(const Tensor& other) const
{
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.size() != b.size()) {
        throw DimensionError("max_abs_diff size mismatch");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

} // namespace mclnf
