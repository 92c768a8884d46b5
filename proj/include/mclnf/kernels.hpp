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

// Data-parallel inner loops behind the tensor engine. Every kernel has a
// scalar reference implementation; on x86-64 an AVX2/FMA variant is
// selected at runtime when the CPU supports it. Elementwise kernels are
// bitwise identical across variants (no FMA contraction); reductions and
// gemm may differ in the last bits because of reassociation.

#include <cstddef>
#include <string_view>

namespace mclnf::kernels {

struct KernelTable {
    const char* name;

    // C(m x n) = op(A) * op(B); op(A) is m x k, op(B) is k x n.
    void (*gemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* c);

    void (*add)(std::size_t n, const double* a, const double* b, double* out);
    void (*sub)(std::size_t n, const double* a, const double* b, double* out);
    void (*mul)(std::size_t n, const double* a, const double* b, double* out);
    void (*scale)(std::size_t n, double s, const double* a, double* out);
    void (*square)(std::size_t n, const double* a, double* out);
    void (*relu)(std::size_t n, const double* a, double* out);
    void (*step)(std::size_t n, const double* a, double* out);
    void (*sin)(std::size_t n, const double* a, double* out);
    void (*cos)(std::size_t n, const double* a, double* out);
    // y += alpha * x
    void (*axpy)(std::size_t n, double alpha, const double* x, double* y);

    double (*sum)(std::size_t n, const double* a);
    double (*dot)(std::size_t n, const double* a, const double* b);

    // out(m x n) = x + broadcast row vector b(n)
    void (*add_rowvec)(std::size_t m, std::size_t n, const double* x, const double* b, double* out);
    // out(n) = sum over the m rows of x
    void (*col_sums)(std::size_t m, std::size_t n, const double* x, double* out);
    // out(m) = sum over the n columns of each row of x
    void (*row_sums)(std::size_t m, std::size_t n, const double* x, double* out);

    // theta[i] -= coef[i] * grad[i], or the scalar coefficient when coef is null.
    void (*descend)(std::size_t n, double* theta, const double* grad, double scalar_coef, const double* coef);
    // fisher = rho * fisher + (1 - rho) * g * g
    void (*ema_square)(std::size_t n, double rho, const double* g, double* fisher);
    // sum_i g_i^2 / (fisher_i + eps)
    double (*inverse_quadratic)(std::size_t n, const double* g, const double* fisher, double eps);
};

const KernelTable& scalar_table();
// Null when the AVX2 variant was not compiled in.
const KernelTable* avx2_table();

bool cpu_has_avx2();

// Table used by the engine. Chosen on first use: MCLNF_KERNELS=scalar|avx2|auto
// (default auto = AVX2 when available).
const KernelTable& active();

// Override the active table; returns false if the name is unknown or the
// variant is unavailable on this machine.
bool select(std::string_view name);

} // namespace mclnf::kernels
