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

#include "doctest.h"

#include "mclnf/errors.hpp"
#include "mclnf/fim.hpp"

#include <cmath>
#include <vector>

using namespace mclnf;

namespace {

FieldArch mlp()
{
    FieldArch a;
    a.n_layers = 3;
    a.hidden = 6;
    a.d_in = 2;
    a.d_out = 2;
    a.omega0 = 5.0;
    return a;
}

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0)
{
    Tensor t(std::move(shape));
    for (auto& v : t.data()) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

} // namespace

TEST_CASE("score of a perfect fit is zero")
{
    const FieldArch arch = mlp();
    Rng rng(1);
    const Tensor theta = init_params(arch, rng);
    const Tensor x = Tensor::matrix(1, 2, {0.3, -0.4});
    const Tensor s = predict(arch, theta, x);
    const Tensor g = score(arch, theta, x, s);
    CHECK(g.size() == param_count(arch));
    for (double v : g.data()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("score of a scalar linear model")
{
    FieldArch lin;
    lin.n_layers = 1;
    lin.d_in = 1;
    lin.d_out = 1;
    const Tensor theta = Tensor::vector({0.7, 0.2}); // w, b
    const double x = 0.5;
    const double s = 1.3;
    const Tensor g = score(lin, theta, Tensor::matrix(1, 1, {x}), Tensor::matrix(1, 1, {s}));
    const double r = s - (0.7 * x + 0.2);
    CHECK(g[0] == doctest::Approx(x * r).epsilon(1e-15));
    CHECK(g[1] == doctest::Approx(r).epsilon(1e-15));
}

TEST_CASE("score is minus the half squared error gradient")
{
    const FieldArch arch = mlp();
    Rng rng(2);
    const Tensor theta = init_params(arch, rng);
    const Tensor x = random_tensor(rng, {5, 2});
    const Tensor s = random_tensor(rng, {5, 2});
    const Tensor g = scores(arch, theta, x, s);
    for (std::size_t j = 0; j < 5; ++j) {
        // independent route: d/dtheta of 1/2 * sum (s_hat - s)^2 via mean * m / 2
        ad::Tape tape;
        const auto p = tape.leaf(theta);
        const auto pred = forward(tape, arch, p, x.row(j));
        const auto diff = tape.sub(pred, tape.constant(s.row(j)));
        const auto half = tape.scale(tape.mean(tape.mul(diff, diff)), 0.5 * 2.0);
        const Tensor want = tape.gradient(half, p);
        for (std::size_t i = 0; i < want.size(); ++i) {
            CHECK(std::abs(g.at(j, i) + want[i]) <= 1e-12);
        }
    }
    const auto [b, e] = score_range(arch, ScoreScope::LastLayer);
    const Tensor last = scores(arch, theta, x, s, ScoreScope::LastLayer);
    REQUIRE(last.cols() == e - b);
    CHECK(e == param_count(arch));
    CHECK(e - b == 6 * 2 + 2);
    for (std::size_t j = 0; j < 5; ++j) {
        for (std::size_t i = b; i < e; ++i) {
            CHECK(last.at(j, i - b) == g.at(j, i));
        }
    }
}

TEST_CASE("scores agree with per-sample tapes across architectures")
{
    for (int variant = 0; variant < 3; ++variant) {
        FieldArch arch = mlp();
        arch.n_layers = 2 + static_cast<std::size_t>(variant);
        if (variant == 1) {
            arch.activation = Activation::Relu;
        }
        if (variant == 2) {
            arch.pe_frequencies = 2;
            arch.omega0 = 30.0;
        }
        CAPTURE(variant);
        Rng rng(40 + variant);
        Tensor theta = init_params(arch, rng);
        for (auto& v : theta.data()) {
            v += rng.uniform(-0.05, 0.05);
        }
        const Tensor x = random_tensor(rng, {7, 2});
        const Tensor s = random_tensor(rng, {7, 2});
        const Tensor g = scores(arch, theta, x, s);

        ad::Tape tape;
        const auto p = tape.leaf(theta);
        std::vector<ad::Var> losses;
        for (std::size_t j = 0; j < 7; ++j) {
            const auto diff = tape.sub(forward(tape, arch, p, x.row(j)), tape.constant(s.row(j)));
            losses.push_back(tape.scale(tape.sum(tape.mul(diff, diff)), -0.5));
        }
        const Tensor rows = tape.per_sample_gradients(losses, p);
        REQUIRE(rows.same_shape(g));
        CHECK(max_abs_diff(rows, g) <= 1e-12);

        // Mean of the rows is minus half the batch MSE gradient.
        const auto diff = tape.sub(forward(tape, arch, p, x), tape.constant(s));
        const Tensor batch = tape.gradient(tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / 7.0), p);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < 7; ++j) {
                mean += g.at(j, i) / 7.0;
            }
            CHECK(std::abs(mean + 0.5 * batch[i]) <= 1e-12);
        }
    }
}

TEST_CASE("fisher updates")
{
    FisherAccumulator acc(3, 0.5, 1e-8);
    CHECK(acc.diag()[0] == 1e-8);
    acc.diag() = Tensor::vector({4.0, 2.0, 1.0});
    const std::vector<double> zero(3, 0.0);
    acc.update(zero);
    CHECK(acc.diag()[0] == 2.0);
    CHECK(acc.diag()[2] == 0.5);
    CHECK(acc.count() == 1);

    FisherAccumulator exact(2, 0.0, 1e-8);
    const std::vector<double> g{3.0, -0.5};
    exact.update(g);
    CHECK(exact.diag()[0] == 9.0);
    CHECK(exact.diag()[1] == 0.25);
    CHECK_THROWS_AS(exact.update(std::vector<double>{1.0}), DimensionError);

    FisherAccumulator cumulative(1, 1.0, 1e-8);
    for (double v : {1.0, 2.0, 3.0}) {
        cumulative.update(std::vector<double>{v});
    }
    CHECK(cumulative.diag()[0] == doctest::Approx(14.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("EMA fisher tracks the score variance")
{
    const double sigma = 0.7;
    const std::size_t n = 8;
    FisherAccumulator acc(n, 0.99, 1e-8);
    Rng rng(12);
    std::vector<double> g(n);
    std::vector<double> avg(n, 0.0);
    const int steps = 10000;
    const int burn = 2000;
    for (int t = 0; t < steps; ++t) {
        for (auto& v : g) {
            v = sigma * rng.normal();
        }
        acc.update(g);
        if (t >= burn) {
            for (std::size_t i = 0; i < n; ++i) {
                avg[i] += acc.diag()[i] / (steps - burn);
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(avg[i] / (sigma * sigma) - 1.0) < 0.1);
    }
}

TEST_CASE("merge is count weighted")
{
    FisherAccumulator a(2, 0.0, 1e-8), b(2, 0.0, 1e-8), c(2, 0.0, 1e-8);
    a.update(std::vector<double>{1.0, 2.0});
    for (int i = 0; i < 3; ++i) {
        b.update(std::vector<double>{3.0, 0.0});
    }
    c.update(std::vector<double>{2.0, 2.0});
    FisherAccumulator ab = a;
    ab.merge(b);
    CHECK(ab.count() == 4);
    CHECK(ab.diag()[0] == doctest::Approx((1.0 + 3 * 9.0) / 4.0));
    CHECK(ab.diag()[1] == doctest::Approx(4.0 / 4.0));
    FisherAccumulator left = ab;
    left.merge(c);
    FisherAccumulator bc = b;
    bc.merge(c);
    FisherAccumulator right = a;
    right.merge(bc);
    CHECK(max_abs_diff(left.diag(), right.diag()) < 1e-14);
}

TEST_CASE("fisher weights")
{
    FisherAccumulator acc(2, 0.99, std::ldexp(1.0, -30));
    acc.diag() = Tensor::vector({1.0 - acc.eps(), 1.0 - acc.eps()});
    const std::vector<double> g{1.0, -1.0};
    CHECK(fim_weight(acc, g, 0.5) == 2.0);
    CHECK(fim_weight(acc, g, 0.0) == 1.0);
    CHECK(fim_weight(acc, std::vector<double>{0.0, 0.0}, 3.0) == 1.0);

    // monotone in lambda and |g|
    CHECK(fim_weight(acc, g, 0.6) > fim_weight(acc, g, 0.5));
    CHECK(fim_weight(acc, std::vector<double>{1.5, -1.0}, 0.5) > fim_weight(acc, g, 0.5));

    FimConfig cfg;
    cfg.lambda = 0.5;
    cfg.normalization = WeightNorm::None;
    const Tensor gm = Tensor::matrix(2, 2, {1.0, -1.0, 0.0, 0.0});
    const Tensor raw = fim_weights(acc, gm, cfg);
    CHECK(raw[0] == 2.0);
    CHECK(raw[1] == 1.0);
    cfg.normalization = WeightNorm::BatchMeanOne;
    const Tensor norm = fim_weights(acc, gm, cfg);
    CHECK(norm[0] + norm[1] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(norm[0] / norm[1] == doctest::Approx(2.0));
}

TEST_CASE("raw weights stay within their bounds")
{
    Rng rng(5);
    const double eps = 1e-6;
    const double lambda = 0.3;
    for (int trial = 0; trial < 200; ++trial) {
        FisherAccumulator acc(4, 0.9, eps);
        acc.diag() = random_tensor(rng, {4}, 0.0, 2.0);
        const Tensor g = random_tensor(rng, {4}, -3.0, 3.0);
        const double w = fim_weight(acc, g.data(), lambda);
        double g2 = 0.0;
        for (double v : g.data()) {
            g2 += v * v;
        }
        CHECK(w >= 1.0);
        CHECK(w <= 1.0 + lambda * g2 / eps);
    }
}

TEST_CASE("fim loss reductions")
{
    const FieldArch arch = mlp();
    Rng rng(3);
    const Tensor theta = init_params(arch, rng);
    const Tensor x = random_tensor(rng, {6, 2});
    Tensor s = random_tensor(rng, {6, 2});
    FisherAccumulator acc(param_count(arch), 0.99, 1e-8);
    FimConfig cfg;
    cfg.lambda = 0.0;

    const Tensor pred = predict(arch, theta, x);
    double mse = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        mse += (pred[i] - s[i]) * (pred[i] - s[i]);
    }
    mse /= 6.0;
    const FimLoss plain = fim_loss(arch, theta, x, s, acc, cfg);
    CHECK(plain.loss == doctest::Approx(mse).epsilon(1e-14));
    for (double w : plain.weights.data()) {
        CHECK(w == 1.0);
    }

    // uniform weights c -> c * MSE
    ad::Tape tape;
    const auto out = forward(tape, arch, tape.constant(theta), x);
    const double scaled = tape.value(weighted_loss(tape, out, s, Tensor(Shape{6}, 2.5))).item();
    CHECK(scaled == doctest::Approx(2.5 * plain.loss).epsilon(1e-14));

    // samples with zero residual add nothing whatever their weight
    for (std::size_t j = 0; j < 3; ++j) {
        s.at(j, 0) = pred.at(j, 0);
        s.at(j, 1) = pred.at(j, 1);
    }
    cfg.lambda = 0.2;
    cfg.normalization = WeightNorm::None;
    acc.diag() = Tensor(Shape{acc.size()}, 0.5);
    const FimLoss mixed = fim_loss(arch, theta, x, s, acc, cfg);
    double expect = 0.0;
    for (std::size_t j = 3; j < 6; ++j) {
        const double r0 = pred.at(j, 0) - s.at(j, 0);
        const double r1 = pred.at(j, 1) - s.at(j, 1);
        expect += mixed.weights[j] * (r0 * r0 + r1 * r1);
    }
    CHECK(mixed.weights[0] == 1.0);
    CHECK(mixed.weights[3] > 1.0);
    CHECK(mixed.loss == doctest::Approx(expect / 6.0).epsilon(1e-14));
}

TEST_CASE("fim-sgd steps")
{
    Rng rng(4);
    const Tensor theta0 = random_tensor(rng, {5});
    const Tensor grad = random_tensor(rng, {5});
    FisherAccumulator acc(5, 0.99, std::ldexp(1.0, -30));
    acc.diag() = Tensor(Shape{5}, 1.0 - acc.eps());
    FimConfig pre;
    pre.precondition = true;
    FimConfig plain;
    Tensor a = theta0, b = theta0;
    fim_sgd_step(a, grad, acc, pre, 0.1);
    fim_sgd_step(b, grad, acc, plain, 0.1);
    CHECK(a.bitwise_equal(b));
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(b[i] == theta0[i] - 0.1 * grad[i]);
    }

    // L = mu/2 theta^2 with F = mu: theta <- (1 - eta) theta
    const double mu = 4.0;
    FisherAccumulator q(1, 0.99, std::ldexp(1.0, -30));
    q.diag()[0] = mu - q.eps();
    Tensor t = Tensor::vector({0.8});
    for (int k = 0; k < 5; ++k) {
        const double before = t[0];
        fim_sgd_step(t, Tensor::vector({mu * t[0]}), q, pre, 0.25);
        CHECK(t[0] == doctest::Approx(0.75 * before).epsilon(1e-15));
    }

    // preconditioning restricted to a trailing range
    FisherAccumulator part(2, 0.99, 1e-8);
    part.diag() = Tensor::vector({4.0 - 1e-8, 0.5 - 1e-8});
    Tensor c = Tensor::vector({1.0, 1.0, 1.0});
    fim_sgd_step(c, Tensor::vector({1.0, 1.0, 1.0}), part, pre, 0.5, 1);
    CHECK(c[0] == 0.5);
    CHECK(c[1] == doctest::Approx(1.0 - 0.125));
    CHECK(c[2] == doctest::Approx(0.0).scale(1.0));

    Tensor d = Tensor::vector({1.0});
    FisherAccumulator tiny(1, 0.99, 1e-300);
    tiny.diag()[0] = 0.0;
    CHECK_THROWS_AS(fim_sgd_step(d, Tensor::vector({1e300}), tiny, pre, 1.0), NumericError);
    CHECK(d[0] == 1.0);
    CHECK_THROWS_AS(fim_sgd_step(d, Tensor::vector({1.0}), tiny, pre, 0.0), ContractError);
}

TEST_CASE("gaussian KL equals the fisher quadratic")
{
    const double sigma = 0.6;
    const std::vector<double> fisher{1.0 / (sigma * sigma)};
    for (double delta : {-2.0, -0.3, 0.0, 0.25, 1.0, 5.0}) {
        const std::vector<double> d{delta};
        CHECK(gaussian_kl(0.4, 0.4 + delta, sigma) == doctest::Approx(fisher_quadratic(fisher, d)).epsilon(1e-15));
    }
    CHECK(gaussian_mean_score(1.0, 0.5, 0.5) == 2.0);
}

TEST_CASE("config validation")
{
    FimConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.lambda = 0.1;
    cfg.rho = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.rho = 0.9;
    cfg.eps = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_FALSE(FimConfig{0.0}.needs_scores());
}
