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

#include "mclnf/field.hpp"

#include "mclnf/errors.hpp"

#include <atomic>
#include <cmath>
#include <numbers>

namespace mclnf {

namespace {

std::atomic<std::size_t> g_out_of_range{0};

} // namespace

void FieldArch::validate() const
{
    require(n_layers >= 1, "field arch: n_layers must be >= 1");
    require(d_in >= 1 && d_out >= 1, "field arch: d_in and d_out must be >= 1");
    require(n_layers == 1 || hidden >= 1, "field arch: hidden width must be >= 1");
    require(activation != Activation::Sine || omega0 > 0.0, "field arch: omega0 must be > 0 for sine nets");
}

std::size_t FieldArch::input_features() const
{
    return d_in + 2 * d_in * pe_frequencies;
}

std::string describe(const FieldArch& arch)
{
    std::string s = std::to_string(arch.n_layers) + " layers, hidden " + std::to_string(arch.hidden) + ", in " +
                    std::to_string(arch.d_in) + ", out " + std::to_string(arch.d_out) + ", ";
    if (arch.activation == Activation::Sine) {
        s += "sine(omega0=" + std::to_string(arch.omega0) + ")";
    } else {
        s += "relu";
    }
    if (arch.pe_frequencies) {
        s += ", positional encoding L=" + std::to_string(arch.pe_frequencies);
    }
    return s;
}

std::vector<LayerLayout> layer_layout(const FieldArch& arch)
{
    arch.validate();
    std::vector<LayerLayout> layers;
    std::size_t offset = 0;
    for (std::size_t l = 0; l < arch.n_layers; ++l) {
        const std::size_t in = l == 0 ? arch.input_features() : arch.hidden;
        const std::size_t out = l + 1 == arch.n_layers ? arch.d_out : arch.hidden;
        layers.push_back({in, out, offset, offset + in * out});
        offset += in * out + out;
    }
    return layers;
}

std::size_t param_count(const FieldArch& arch)
{
    return layer_layout(arch).back().end();
}

Tensor init_params(const FieldArch& arch, Rng& rng)
{
    const auto layers = layer_layout(arch);
    Tensor theta(Shape{layers.back().end()});
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const double fan_in = static_cast<double>(layer.fan_in);
        double bound = 0.0;
        double bias_bound = 0.0;
        if (arch.activation == Activation::Sine) {
            bound = l == 0 ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / arch.omega0;
            bias_bound = bound;
        } else {
            bound = std::sqrt(6.0 / fan_in);
        }
        for (std::size_t i = layer.weight_offset; i < layer.bias_offset; ++i) {
            theta[i] = rng.uniform(-bound, bound);
        }
        for (std::size_t i = layer.bias_offset; i < layer.end(); ++i) {
            theta[i] = bias_bound > 0.0 ? rng.uniform(-bias_bound, bias_bound) : 0.0;
        }
    }
    return theta;
}

Tensor encode_inputs(const FieldArch& arch, const Tensor& coords)
{
    if (coords.rank() != 2 || coords.cols() != arch.d_in) {
        throw DimensionError("coords must be (m, " + std::to_string(arch.d_in) + "), got " +
                             shape_string(coords.shape()));
    }
    std::size_t outside = 0;
    for (double c : coords.data()) {
        if (c < -1.0 || c > 1.0) {
            ++outside;
        }
    }
    if (outside) {
        g_out_of_range.fetch_add(outside, std::memory_order_relaxed);
    }
    if (arch.pe_frequencies == 0) {
        return coords;
    }
    const std::size_t m = coords.rows();
    const std::size_t width = arch.input_features();
    Tensor out(Shape{m, width});
    for (std::size_t r = 0; r < m; ++r) {
        std::size_t c = 0;
        for (std::size_t a = 0; a < arch.d_in; ++a) {
            out.at(r, c++) = coords.at(r, a);
        }
        for (std::size_t k = 0; k < arch.pe_frequencies; ++k) {
            const double freq = std::ldexp(std::numbers::pi, static_cast<int>(k));
            for (std::size_t a = 0; a < arch.d_in; ++a) {
                out.at(r, c++) = std::sin(freq * coords.at(r, a));
                out.at(r, c++) = std::cos(freq * coords.at(r, a));
            }
        }
    }
    return out;
}

ad::Var forward(ad::Tape& tape, const FieldArch& arch, ad::Var params, const Tensor& coords)
{
    const auto layers = layer_layout(arch);
    if (tape.value(params).size() != layers.back().end()) {
        throw DimensionError("parameter vector has " + std::to_string(tape.value(params).size()) +
                             " entries, architecture needs " + std::to_string(layers.back().end()));
    }
    ad::Var h = tape.constant(encode_inputs(arch, coords));
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const ad::Var w = tape.slice(params, layer.weight_offset, {layer.fan_in, layer.fan_out});
        const ad::Var b = tape.slice(params, layer.bias_offset, {1, layer.fan_out});
        h = tape.add_rowvec(tape.matmul(h, w), b);
        if (l + 1 < layers.size()) {
            h = arch.activation == Activation::Sine ? tape.sin(tape.scale(h, arch.omega0)) : tape.relu(h);
        }
    }
    return h;
}

ad::Var squared_errors(ad::Tape& tape, ad::Var predictions, const Tensor& targets)
{
    const ad::Var residual = tape.sub(predictions, tape.constant(targets));
    return tape.row_sums(tape.square(residual));
}

ad::Var weighted_loss(ad::Tape& tape, ad::Var predictions, const Tensor& targets, const Tensor& weights)
{
    const ad::Var per = squared_errors(tape, predictions, targets);
    if (weights.size() != tape.value(per).size()) {
        throw DimensionError("one weight per sample required");
    }
    return tape.mean(tape.mul(per, tape.constant(weights.reshaped({weights.size(), 1}))));
}

Tensor predict(const FieldArch& arch, const Tensor& params, const Tensor& coords)
{
    ad::Tape tape;
    tape.reserve(4 * arch.n_layers + 2);
    const ad::Var out = forward(tape, arch, tape.constant(params), coords);
    return tape.value(out);
}

std::size_t out_of_range_queries()
{
    return g_out_of_range.load(std::memory_order_relaxed);
}

FieldModel::FieldModel(FieldArch arch, Tensor params) : arch_(std::move(arch)), params_(std::move(params))
{
    if (params_.size() != param_count(arch_)) {
        throw DimensionError("parameter vector does not match the architecture");
    }
}

FieldModel::FieldModel(const FieldArch& arch, Rng& rng) : arch_(arch), params_(init_params(arch, rng)) {}

Tensor FieldModel::predict(const Tensor& coords) const
{
    return mclnf::predict(arch_, params_, coords);
}

} // namespace mclnf
