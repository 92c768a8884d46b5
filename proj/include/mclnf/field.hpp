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

// Coordinate MLPs: x in R^d_in -> field value in R^d_out.
//
// Parameters live in one flat vector. Layer l owns a (fan_in x fan_out)
// row-major weight block followed by its (1 x fan_out) bias, layers in
// order. Hidden layers apply sin(omega0 * z) or relu(z); the last layer
// is linear.

#include "mclnf/rng.hpp"
#include "mclnf/tape.hpp"
#include "mclnf/tensor.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace mclnf {

enum class Activation { Sine, Relu };

struct FieldArch {
    // Number of linear layers, so n_layers - 1 hidden activations.
    std::size_t n_layers = 5;
    std::size_t hidden = 128;
    std::size_t d_in = 2;
    std::size_t d_out = 3;
    Activation activation = Activation::Sine;
    double omega0 = 30.0;
    // Positional encoding frequencies; 0 disables the encoding.
    std::size_t pe_frequencies = 0;

    void validate() const;
    // Width of the first layer's input after positional encoding.
    [[nodiscard]] std::size_t input_features() const;

    friend bool operator==(const FieldArch&, const FieldArch&) = default;
};

std::string describe(const FieldArch& arch);

struct LayerLayout {
    std::size_t fan_in;
    std::size_t fan_out;
    std::size_t weight_offset;
    std::size_t bias_offset;

    [[nodiscard]] std::size_t begin() const { return weight_offset; }
    [[nodiscard]] std::size_t end() const { return bias_offset + fan_out; }
};

std::vector<LayerLayout> layer_layout(const FieldArch& arch);

// Exact number of weights and biases.
std::size_t param_count(const FieldArch& arch);

// Sine nets: first layer U(-1/fan_in, 1/fan_in), later layers
// U(-sqrt(6/fan_in)/omega0, +...). ReLU nets: He-uniform weights, zero bias.
Tensor init_params(const FieldArch& arch, Rng& rng);

// [x, sin(2^k pi x), cos(2^k pi x)] for k < pe_frequencies, per input axis.
Tensor encode_inputs(const FieldArch& arch, const Tensor& coords);

// Records the network on `tape`; returns predictions (m x d_out).
ad::Var forward(ad::Tape& tape, const FieldArch& arch, ad::Var params, const Tensor& coords);

// Per-sample squared error ||s_hat_j - s_j||^2 as an (m x 1) node.
ad::Var squared_errors(ad::Tape& tape, ad::Var predictions, const Tensor& targets);

// (1/m) sum_j w_j ||s_hat_j - s_j||^2 with w held constant. Plain MSE is the
// same graph with w = 1, so both losses follow identical arithmetic.
ad::Var weighted_loss(ad::Tape& tape, ad::Var predictions, const Tensor& targets, const Tensor& weights);

Tensor predict(const FieldArch& arch, const Tensor& params, const Tensor& coords);

// Queries that fell outside [-1, 1] on some axis since process start.
std::size_t out_of_range_queries();

class FieldModel {
public:
    FieldModel(FieldArch arch, Tensor params);
    FieldModel(const FieldArch& arch, Rng& rng);

    [[nodiscard]] const FieldArch& arch() const { return arch_; }
    [[nodiscard]] const Tensor& params() const { return params_; }
    Tensor& params() { return params_; }

    [[nodiscard]] Tensor predict(const Tensor& coords) const;

private:
    FieldArch arch_;
    Tensor params_;
};

} // namespace mclnf
