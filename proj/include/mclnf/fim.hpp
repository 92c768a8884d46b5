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

// Diagonal empirical Fisher, Fisher-weighted squared error, and the
// Fisher-preconditioned SGD step.

#include "mclnf/field.hpp"
#include "mclnf/tensor.hpp"

#include <cstddef>
#include <span>

namespace mclnf {

enum class WeightNorm { None, BatchMeanOne };
enum class ScoreScope { FullParams, LastLayer };

struct FimConfig {
    double lambda = 0.1;
    double rho = 0.99;
    double eps = 1e-8;
    WeightNorm normalization = WeightNorm::BatchMeanOne;
    ScoreScope scope = ScoreScope::FullParams;
    // Divide the step by (F + eps); off means plain SGD.
    bool precondition = false;
    // Keep F across tasks instead of resetting it per task.
    bool carry_fisher = false;
    // Apply the weights in the outer (query) loss as well.
    bool outer_weights = true;

    void validate() const;
    // Fisher statistics are only needed when something consumes them.
    [[nodiscard]] bool needs_scores() const { return lambda > 0.0 || precondition; }
};

class FisherAccumulator {
public:
    FisherAccumulator() = default;
    // F starts at `eps` in every entry.
    FisherAccumulator(std::size_t n, double rho, double eps);

    void reset();
    // F <- rho F + (1 - rho) g*g. With rho = 1 F is the plain running mean
    // of g*g over all observations instead.
    void update(std::span<const double> g);
    // Count-weighted average of two accumulators.
    void merge(const FisherAccumulator& other);

    [[nodiscard]] const Tensor& diag() const { return diag_; }
    Tensor& diag() { return diag_; }
    [[nodiscard]] std::size_t count() const { return count_; }
    [[nodiscard]] std::size_t size() const { return diag_.size(); }
    [[nodiscard]] double rho() const { return rho_; }
    [[nodiscard]] double eps() const { return eps_; }

private:
    Tensor diag_;
    double rho_ = 0.99;
    double eps_ = 1e-8;
    std::size_t count_ = 0;
};

// Parameter range [begin, end) covered by the score scope.
std::pair<std::size_t, std::size_t> score_range(const FieldArch& arch, ScoreScope scope);

// Unit-variance Gaussian score J^T (s - s_hat) of one sample, restricted to
// the scope. `x` is (1, d_in), `s` is (1, d_out).
Tensor score(const FieldArch& arch, const Tensor& theta, const Tensor& x, const Tensor& s,
             ScoreScope scope = ScoreScope::FullParams);

// One row per sample, each from its own backward pass.
Tensor scores(const FieldArch& arch, const Tensor& theta, const Tensor& coords, const Tensor& targets,
              ScoreScope scope = ScoreScope::FullParams);

// w = 1 + lambda * g^T (F + eps)^-1 g per row of `g`, then normalized.
Tensor fim_weights(const FisherAccumulator& acc, const Tensor& g, const FimConfig& cfg);
double fim_weight(const FisherAccumulator& acc, std::span<const double> g, double lambda);

struct FimLoss {
    double loss;
    Tensor weights;
};

// (1/m) sum_j w_j ||s_hat_j - s_j||^2 with the weights held constant.
FimLoss fim_loss(const FieldArch& arch, const Tensor& theta, const Tensor& coords, const Tensor& targets,
                 const FisherAccumulator& acc, const FimConfig& cfg);

// Per-parameter step sizes: eta / (F + eps) inside the Fisher range when
// preconditioning, eta elsewhere. Empty when plain SGD applies.
Tensor step_sizes(const FisherAccumulator& acc, const FimConfig& cfg, double eta, std::size_t n_params,
                  std::size_t fisher_offset);

// theta <- theta - eta * grad / (F + eps), or plain SGD. A non-finite result
// throws NumericError and leaves theta untouched.
void fim_sgd_step(Tensor& theta, const Tensor& grad, const FisherAccumulator& acc, const FimConfig& cfg, double eta,
                  std::size_t fisher_offset = 0);

// Scalar Gaussian-mean model N(theta, sigma^2).
double gaussian_mean_score(double x, double theta, double sigma);
double gaussian_kl(double theta1, double theta2, double sigma);
// 1/2 delta^T diag(F) delta
double fisher_quadratic(std::span<const double> fisher, std::span<const double> delta);

} // namespace mclnf
