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

#include "mclnf/kernels.hpp"

#include "trig.hpp"

#include <cmath>
#include <vector>

namespace mclnf::kernels {

namespace {

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c)
{
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = ta ? a[p * m + i] : a[i * k + p];
                const double bv = tb ? b[j * k + p] : b[p * n + j];
                s += av * bv;
            }
            c[i * n + j] = s;
        }
    }
}

void add(std::size_t n, const double* a, const double* b, double* out)
{
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = a[i] + b[i];
    }
}

void sub(std::size_t n, const double* a, const double* b, double* out)
{
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = a[i] - b[i];
    }
}

void mul(std::size_t n, const double* a, const double* b, double* out)
{
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = a[i] * b[i];
    }
}

void scale(std::size_t n, double s, const double* a, double* out)
{
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = s * a[i];
    }
}

void square(std::size_t n, const double* a, double* out)
{
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = a[i] * a[i];
    }
}

void relu(std::size_t n, const double* a, double* out)
{
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = a[i] > 0.0 ? a[i] : 0.0;
    }
}

void step(std::size_t n, const double* a, double* out)
{
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = a[i] > 0.0 ? 1.0 : 0.0;
    }
}

void sin(std::size_t n, const double* a, double* out)
{
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = trig::sin(a[i]);
    }
}

void cos(std::size_t n, const double* a, double* out)
{
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = trig::cos(a[i]);
    }
}

void axpy(std::size_t n, double alpha, const double* x, double* y)
{
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

double sum(std::size_t n, const double* a)
{
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += a[i];
    }
    return s;
}

double dot(std::size_t n, const double* a, const double* b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += a[i] * b[i];
    }
    return s;
}

void add_rowvec(std::size_t m, std::size_t n, const double* x, const double* b, double* out)
{
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = x[i * n + j] + b[j];
        }
    }
}

void col_sums(std::size_t m, std::size_t n, const double* x, double* out)
{
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = 0.0;
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j] += x[i * n + j];
        }
    }
}

void row_sums(std::size_t m, std::size_t n, const double* x, double* out)
{
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            s += x[i * n + j];
        }
        out[i] = s;
    }
}

void descend(std::size_t n, double* theta, const double* grad, double scalar_coef, const double* coef)
{
    if (coef) {
        for (std::size_t i = 0; i < n; ++i) {
            theta[i] -= coef[i] * grad[i];
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            theta[i] -= scalar_coef * grad[i];
        }
    }
}

void ema_square(std::size_t n, double rho, const double* g, double* fisher)
{
    const double w = 1.0 - rho;
    for (std::size_t i = 0; i < n; ++i) {
        fisher[i] = rho * fisher[i] + w * (g[i] * g[i]);
    }
}

double inverse_quadratic(std::size_t n, const double* g, const double* fisher, double eps)
{
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += (g[i] * g[i]) / (fisher[i] + eps);
    }
    return s;
}

} // namespace

const KernelTable& scalar_table()
{
    static const KernelTable table{
        "scalar", gemm, add, sub, mul, scale, square, relu, step, sin, cos, axpy, sum, dot,
        add_rowvec, col_sums, row_sums, descend, ema_square, inverse_quadratic,
    };
    return table;
}

} // namespace mclnf::kernels
