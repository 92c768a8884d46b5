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

#include "mclnf/selftest.hpp"

#include "mclnf/fim.hpp"
#include "mclnf/field.hpp"
#include "mclnf/rng.hpp"
#include "mclnf/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mclnf {

namespace {

std::string fmt(const char* f, double a, double b = 0.0)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

double mse_at(const FieldArch& arch, const Tensor& theta, const Tensor& x, const Tensor& y)
{
    const Tensor p = predict(arch, theta, x);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p.ptr()[i] - y.ptr()[i];
        s += d * d;
    }
    return s / static_cast<double>(x.rows());
}

SelfCheck gradient_check(Rng& rng)
{
    double worst = 0.0;
    for (int m = 0; m < 6; ++m) {
        FieldArch a;
        a.n_layers = 3;
        a.hidden = 10;
        a.d_in = 2;
        a.d_out = 2;
        a.activation = m % 2 ? Activation::Relu : Activation::Sine;
        a.omega0 = 5.0;
        const Tensor theta = init_params(a, rng);
        Tensor x({6, 2});
        Tensor y({6, 2});
        for (auto& v : x.data())
            v = rng.uniform(-1, 1);
        for (auto& v : y.data())
            v = rng.uniform(-1, 1);
        ad::Tape t;
        const ad::Var th = t.leaf(theta);
        const ad::Var loss = t.mean(squared_errors(t, forward(t, a, th, x), y));
        const Tensor g = t.gradient(loss, th);
        const double h = 1e-6;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            Tensor p = theta;
            Tensor q = theta;
            p.ptr()[k] += h;
            q.ptr()[k] -= h;
            const double fd = (mse_at(a, p, x, y) - mse_at(a, q, x, y)) / (2 * h);
            const double den = std::max({std::abs(fd), std::abs(g.ptr()[k]), 1e-4});
            worst = std::max(worst, std::abs(fd - g.ptr()[k]) / den);
        }
    }
    return {"gradient vs finite differences", worst < 1e-4, fmt("max rel err %.3g", worst)};
}

SelfCheck fisher_check(Rng& rng)
{
    const double theta = 0.3;
    const double sigma = 0.5;
    FisherAccumulator acc(1, 1.0, 1e-12);
    for (int i = 0; i < 100000; ++i) {
        const double x = theta + sigma * rng.normal();
        const double s = gaussian_mean_score(x, theta, sigma);
        acc.update(std::span(&s, 1));
    }
    const double f = acc.diag().ptr()[0];
    const double want = 1.0 / (sigma * sigma);
    const double rel = std::abs(f - want) / want;
    return {"empirical Fisher of a Gaussian mean", rel < 0.05, fmt("F=%.4f want %.4f", f, want)};
}

SelfCheck kl_check()
{
    const double sigma = 0.5;
    const double fisher = 1.0 / (sigma * sigma);
    double worst = 0.0;
    for (double d : {-1.0, -0.25, 0.125, 0.5, 2.0}) {
        const double q = fisher_quadratic(std::span(&fisher, 1), std::span(&d, 1));
        worst = std::max(worst, std::abs(q - gaussian_kl(0.0, d, sigma)));
    }
    return {"KL equals the Fisher quadratic", worst == 0.0, fmt("max abs diff %.3g", worst)};
}

SelfCheck weight_check(Rng& rng)
{
    FimConfig cfg;
    cfg.lambda = 0.5;
    cfg.eps = 1e-8;
    std::size_t bad = 0;
    for (int i = 0; i < 10000; ++i) {
        FisherAccumulator acc(4, 0.9, cfg.eps);
        for (auto& v : acc.diag().data())
            v = rng.uniform(0.0, 2.0);
        double g[4];
        double g2 = 0.0;
        for (double& v : g) {
            v = rng.normal();
            g2 += v * v;
        }
        const double w = fim_weight(acc, g, cfg.lambda);
        if (!(w >= 1.0 && w <= 1.0 + cfg.lambda * g2 / cfg.eps))
            ++bad;
    }
    FisherAccumulator acc(3, 0.9, cfg.eps);
    Tensor rows({32, 3});
    for (auto& v : rows.data())
        v = rng.normal();
    const Tensor w = fim_weights(acc, rows, cfg);
    double mean = 0.0;
    for (double v : w.data())
        mean += v;
    mean /= static_cast<double>(w.size());
    const bool ok = bad == 0 && std::abs(mean - 1.0) <= 1e-12;
    return {"Fisher weight bounds", ok, fmt("violations %.0f, batch mean %.15f", double(bad), mean)};
}

SelfCheck meta_check()
{
    const double eta = 0.1;
    const Tensor theta0 = Tensor::vector({1.5, -2.0});
    auto half_sq = [](ad::Tape& t, ad::Var th) { return t.scale(t.sum(t.square(th)), 0.5); };
    const Tensor g = ad::meta_gradient(theta0, 1, eta, half_sq, half_sq, ad::Order::Second);
    double worst = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        worst = std::max(worst, std::abs(g.ptr()[i] - (1 - eta) * (1 - eta) * theta0.ptr()[i]));
    return {"unrolled meta-gradient closed form", worst <= 1e-12, fmt("max abs err %.3g", worst)};
}

} // namespace

std::vector<SelfCheck> run_selftest(std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<SelfCheck> out;
    Rng a = rng.split(1);
    Rng b = rng.split(2);
    Rng c = rng.split(3);
    out.push_back(gradient_check(a));
    out.push_back(fisher_check(b));
    out.push_back(kl_check());
    out.push_back(weight_check(c));
    out.push_back(meta_check());
    return out;
}

} // namespace mclnf
