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

#include "mclnf/fim.hpp"

#include "mclnf/errors.hpp"
#include "mclnf/kernels.hpp"

#include <cmath>

namespace mclnf {

void FimConfig::validate() const
{
    if (!(lambda >= 0.0)) {
        throw ConfigError("fim lambda must be >= 0");
    }
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw ConfigError("fim rho must lie in [0, 1]");
    }
    if (!(eps > 0.0)) {
        throw ConfigError("fim eps must be > 0");
    }
}

FisherAccumulator::FisherAccumulator(std::size_t n, double rho, double eps)
    : diag_(Shape{n}, eps), rho_(rho), eps_(eps)
{
    require(rho >= 0.0 && rho <= 1.0, "fisher decay must lie in [0, 1]");
    require(eps > 0.0, "fisher damping must be > 0");
}

void FisherAccumulator::reset()
{
    for (double& f : diag_.data()) {
        f = eps_;
    }
    count_ = 0;
}

void FisherAccumulator::update(std::span<const double> g)
{
    if (g.size() != diag_.size()) {
        throw DimensionError("fisher update: score has " + std::to_string(g.size()) + " entries, expected " +
                             std::to_string(diag_.size()));
    }
    if (rho_ == 1.0) {
        const double keep = static_cast<double>(count_) / static_cast<double>(count_ + 1);
        kernels::active().ema_square(g.size(), keep, g.data(), diag_.ptr());
    } else {
        kernels::active().ema_square(g.size(), rho_, g.data(), diag_.ptr());
    }
    ++count_;
}

void FisherAccumulator::merge(const FisherAccumulator& other)
{
    if (other.diag_.size() != diag_.size()) {
        throw DimensionError("fisher merge: size mismatch");
    }
    const std::size_t total = count_ + other.count_;
    if (total == 0) {
        return;
    }
    const double a = static_cast<double>(count_) / static_cast<double>(total);
    const double b = static_cast<double>(other.count_) / static_cast<double>(total);
    for (std::size_t i = 0; i < diag_.size(); ++i) {
        diag_[i] = a * diag_[i] + b * other.diag_[i];
    }
    count_ = total;
}

std::pair<std::size_t, std::size_t> score_range(const FieldArch& arch, ScoreScope scope)
{
    const auto layers = layer_layout(arch);
    if (scope == ScoreScope::LastLayer) {
        return {layers.back().begin(), layers.back().end()};
    }
    return {0, layers.back().end()};
}

Tensor score(const FieldArch& arch, const Tensor& theta, const Tensor& x, const Tensor& s, ScoreScope scope)
{
    require(x.rank() == 2 && x.rows() == 1, "score takes a single sample");
    const auto [begin, end] = score_range(arch, scope);
    return scores(arch, theta, x, s, scope).reshaped({end - begin});
}

Tensor scores(const FieldArch& arch, const Tensor& theta, const Tensor& coords, const Tensor& targets,
              ScoreScope scope)
{
    if (targets.rank() != 2 || targets.rows() != coords.rows() || targets.cols() != arch.d_out) {
        throw DimensionError("scores: targets must be (" + std::to_string(coords.rows()) + ", " +
                             std::to_string(arch.d_out) + ")");
    }
    const auto layers = layer_layout(arch);
    if (theta.size() != layers.back().end()) {
        throw DimensionError("scores: parameter vector does not match the architecture");
    }
    const auto& k = kernels::active();
    const auto [begin, end] = score_range(arch, scope);
    const std::size_t m = coords.rows();
    const std::size_t n_layers = layers.size();
    const bool sine = arch.activation == Activation::Sine;

    // Batch forward with the same kernels as the tape, keeping each layer's
    // input and the activation derivative.
    std::vector<Tensor> inputs(n_layers);
    std::vector<Tensor> slope(n_layers);
    Tensor h = encode_inputs(arch, coords);
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& L = layers[l];
        Tensor z(Shape{m, L.fan_out});
        k.gemm(false, false, m, L.fan_out, L.fan_in, h.ptr(), theta.ptr() + L.weight_offset, z.ptr());
        k.add_rowvec(m, L.fan_out, z.ptr(), theta.ptr() + L.bias_offset, z.ptr());
        inputs[l] = std::move(h);
        if (l + 1 == n_layers) {
            h = std::move(z);
            break;
        }
        Tensor act(Shape{m, L.fan_out});
        Tensor d(Shape{m, L.fan_out});
        if (sine) {
            k.scale(z.size(), arch.omega0, z.ptr(), z.ptr());
            k.sin(z.size(), z.ptr(), act.ptr());
            k.cos(z.size(), z.ptr(), d.ptr());
            k.scale(d.size(), arch.omega0, d.ptr(), d.ptr());
        } else {
            k.relu(z.size(), z.ptr(), act.ptr());
            k.step(z.size(), z.ptr(), d.ptr());
        }
        slope[l] = std::move(d);
        h = std::move(act);
    }
    const Tensor& pred = h;

    // One backward pass per sample through the stored activations.
    Tensor out(Shape{m, end - begin});
    std::vector<double> delta;
    std::vector<double> back;
    for (std::size_t j = 0; j < m; ++j) {
        delta.assign(arch.d_out, 0.0);
        for (std::size_t c = 0; c < arch.d_out; ++c) {
            delta[c] = pred.at(j, c) - targets.at(j, c);
        }
        double* row = out.ptr() + j * (end - begin);
        for (std::size_t l = n_layers; l-- > 0;) {
            const auto& L = layers[l];
            if (L.end() <= begin) {
                break;
            }
            const double* in = inputs[l].ptr() + j * L.fan_in;
            for (std::size_t p = 0; p < L.fan_in; ++p) {
                double* w = row + (L.weight_offset + p * L.fan_out - begin);
                for (std::size_t q = 0; q < L.fan_out; ++q) {
                    w[q] = -(in[p] * delta[q]);
                }
            }
            for (std::size_t q = 0; q < L.fan_out; ++q) {
                row[L.bias_offset + q - begin] = -delta[q];
            }
            if (l == 0 || layers[l - 1].end() <= begin) {
                break;
            }
            back.assign(L.fan_in, 0.0);
            const double* W = theta.ptr() + L.weight_offset;
            for (std::size_t p = 0; p < L.fan_in; ++p) {
                back[p] = k.dot(L.fan_out, W + p * L.fan_out, delta.data());
            }
            const double* d = slope[l - 1].ptr() + j * L.fan_in;
            delta.resize(L.fan_in);
            for (std::size_t p = 0; p < L.fan_in; ++p) {
                delta[p] = back[p] * d[p];
            }
        }
    }
    return out;
}

double fim_weight(const FisherAccumulator& acc, std::span<const double> g, double lambda)
{
    if (g.size() != acc.size()) {
        throw DimensionError("fim weight: score and fisher sizes differ");
    }
    if (lambda == 0.0) {
        return 1.0;
    }
    return 1.0 + lambda * kernels::active().inverse_quadratic(g.size(), g.data(), acc.diag().ptr(), acc.eps());
}

Tensor fim_weights(const FisherAccumulator& acc, const Tensor& g, const FimConfig& cfg)
{
    require(g.rank() == 2, "fim weights take a (batch, params) score matrix");
    const std::size_t m = g.rows();
    const std::size_t n = g.cols();
    Tensor w(Shape{m}, 1.0);
    if (cfg.lambda == 0.0) {
        return w;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        w[j] = fim_weight(acc, std::span<const double>(g.ptr() + j * n, n), cfg.lambda);
        total += w[j];
    }
    if (!std::isfinite(total)) {
        throw NumericError("fim weights overflowed");
    }
    if (cfg.normalization == WeightNorm::BatchMeanOne && m > 0) {
        const double mean = total / static_cast<double>(m);
        for (double& x : w.data()) {
            x /= mean;
        }
    }
    return w;
}

FimLoss fim_loss(const FieldArch& arch, const Tensor& theta, const Tensor& coords, const Tensor& targets,
                 const FisherAccumulator& acc, const FimConfig& cfg)
{
    require(coords.rows() > 0, "fim loss of an empty batch");
    Tensor w(Shape{coords.rows()}, 1.0);
    if (cfg.lambda > 0.0) {
        w = fim_weights(acc, scores(arch, theta, coords, targets, cfg.scope), cfg);
    }
    ad::Tape tape;
    const ad::Var pred = forward(tape, arch, tape.constant(theta), coords);
    return {tape.value(weighted_loss(tape, pred, targets, w)).item(), w};
}

Tensor step_sizes(const FisherAccumulator& acc, const FimConfig& cfg, double eta, std::size_t n_params,
                  std::size_t fisher_offset)
{
    if (!cfg.precondition) {
        return {};
    }
    require(fisher_offset + acc.size() <= n_params, "fisher range exceeds the parameter vector");
    Tensor c(Shape{n_params}, eta);
    for (std::size_t i = 0; i < acc.size(); ++i) {
        c[fisher_offset + i] = eta / (acc.diag()[i] + acc.eps());
    }
    return c;
}

void fim_sgd_step(Tensor& theta, const Tensor& grad, const FisherAccumulator& acc, const FimConfig& cfg, double eta,
                  std::size_t fisher_offset)
{
    require(eta > 0.0, "step size must be > 0");
    if (grad.size() != theta.size()) {
        throw DimensionError("gradient and parameter sizes differ");
    }
    const Tensor coef = step_sizes(acc, cfg, eta, theta.size(), fisher_offset);
    Tensor next = theta;
    kernels::active().descend(next.size(), next.ptr(), grad.ptr(), eta, coef.size() ? coef.ptr() : nullptr);
    if (!next.all_finite()) {
        throw NumericError("non-finite parameter update rejected");
    }
    theta = std::move(next);
}

double gaussian_mean_score(double x, double theta, double sigma)
{
    return (x - theta) / (sigma * sigma);
}

double gaussian_kl(double theta1, double theta2, double sigma)
{
    const double d = theta2 - theta1;
    return d * d / (2.0 * sigma * sigma);
}

double fisher_quadratic(std::span<const double> fisher, std::span<const double> delta)
{
    require(fisher.size() == delta.size(), "fisher and delta sizes differ");
    double q = 0.0;
    for (std::size_t i = 0; i < delta.size(); ++i) {
        q += fisher[i] * delta[i] * delta[i];
    }
    return 0.5 * q;
}

} // namespace mclnf
