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

// AVX2 variants. This translation unit is compiled with -mavx2 -mfma and
// is only entered after a runtime CPU check.

#include "mclnf/kernels.hpp"

#include "trig.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>
#include <vector>

namespace mclnf::kernels {

namespace {

inline double hsum(__m256d v)
{
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(std::size_t n, const double* a, const double* b)
{
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double sum(std::size_t n, const double* a)
{
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
        acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(a + i + 4));
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
    }
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        s += a[i];
    }
    return s;
}

void axpy(std::size_t n, double alpha, const double* x, double* y)
{
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

// c_row(n) += alpha * b_row(n), fused; only used inside gemm.
inline void fma_row(std::size_t n, double alpha, const double* b, double* c)
{
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        _mm256_storeu_pd(c + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), _mm256_loadu_pd(c + j)));
    }
    for (; j < n; ++j) {
        c[j] += alpha * b[j];
    }
}

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c)
{
    if (!ta && (n == 1 || (tb && k >= 16))) {
        // Both operands contiguous along k: one dot product per output.
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                c[i * n + j] = dot(k, a + i * k, b + j * k);
            }
        }
        return;
    }
    std::vector<double> packed;
    const double* bk = b;
    if (tb) {
        packed.resize(k * n);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t p = 0; p < k; ++p) {
                packed[p * n + j] = b[j * k + p];
            }
        }
        bk = packed.data();
    }
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            crow[j] = 0.0;
        }
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ta ? a[p * m + i] : a[i * k + p];
            fma_row(n, av, bk + p * n, crow);
        }
    }
}

template <class Op>
inline void binary(std::size_t n, const double* a, const double* b, double* out, Op op)
{
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, op(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) {
        const __m256d r = op(_mm256_set1_pd(a[i]), _mm256_set1_pd(b[i]));
        out[i] = _mm256_cvtsd_f64(r);
    }
}

void add(std::size_t n, const double* a, const double* b, double* out)
{
    binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_add_pd(x, y); });
}

void sub(std::size_t n, const double* a, const double* b, double* out)
{
    binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_sub_pd(x, y); });
}

void mul(std::size_t n, const double* a, const double* b, double* out)
{
    binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); });
}

void scale(std::size_t n, double s, const double* a, double* out)
{
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(vs, _mm256_loadu_pd(a + i)));
    }
    for (; i < n; ++i) {
        out[i] = s * a[i];
    }
}

void square(std::size_t n, const double* a, double* out)
{
    binary(n, a, a, out, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); });
}

void relu(std::size_t n, const double* a, double* out)
{
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d x = _mm256_loadu_pd(a + i);
        const __m256d pos = _mm256_cmp_pd(x, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(pos, x));
    }
    for (; i < n; ++i) {
        out[i] = a[i] > 0.0 ? a[i] : 0.0;
    }
}

void step(std::size_t n, const double* a, double* out)
{
    const __m256d zero = _mm256_setzero_pd();
    const __m256d one = _mm256_set1_pd(1.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d pos = _mm256_cmp_pd(_mm256_loadu_pd(a + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(pos, one));
    }
    for (; i < n; ++i) {
        out[i] = a[i] > 0.0 ? 1.0 : 0.0;
    }
}

// Same operation order as trig.hpp, four lanes at a time.
template <bool Cosine>
void sincos(std::size_t n, const double* a, double* out)
{
    const __m256d two_over_pi = _mm256_set1_pd(trig::two_over_pi);
    const __m256d p1 = _mm256_set1_pd(trig::pio2_1);
    const __m256d p2 = _mm256_set1_pd(trig::pio2_2);
    const __m256d p3 = _mm256_set1_pd(trig::pio2_3);
    const __m256d limit = _mm256_set1_pd(trig::limit);
    const __m256d abs_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
    const __m256d sign = _mm256_castsi256_pd(_mm256_set1_epi64x(static_cast<long long>(0x8000000000000000ULL)));
    const __m256d half = _mm256_set1_pd(0.5);
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256i i1 = _mm256_set1_epi64x(1);
    const __m256i i2 = _mm256_set1_epi64x(2);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d x = _mm256_loadu_pd(a + i);
        const __m256d ok = _mm256_cmp_pd(_mm256_and_pd(x, abs_mask), limit, _CMP_LE_OQ);
        const __m256d k = _mm256_round_pd(_mm256_mul_pd(x, two_over_pi), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
        __m256d r = _mm256_sub_pd(x, _mm256_mul_pd(k, p1));
        r = _mm256_sub_pd(r, _mm256_mul_pd(k, p2));
        r = _mm256_sub_pd(r, _mm256_mul_pd(k, p3));
        // out-of-range lanes may hold garbage here; they are replaced below
        const __m256d kk = _mm256_and_pd(k, ok);
        __m256i q = _mm256_cvtepi32_epi64(_mm256_cvtpd_epi32(kk));
        q = _mm256_and_si256(q, _mm256_set1_epi64x(3));

        const __m256d z = _mm256_mul_pd(r, r);
        __m256d ps = _mm256_set1_pd(trig::s6);
        ps = _mm256_add_pd(_mm256_mul_pd(ps, z), _mm256_set1_pd(trig::s5));
        ps = _mm256_add_pd(_mm256_mul_pd(ps, z), _mm256_set1_pd(trig::s4));
        ps = _mm256_add_pd(_mm256_mul_pd(ps, z), _mm256_set1_pd(trig::s3));
        ps = _mm256_add_pd(_mm256_mul_pd(ps, z), _mm256_set1_pd(trig::s2));
        ps = _mm256_add_pd(_mm256_mul_pd(ps, z), _mm256_set1_pd(trig::s1));
        const __m256d sv = _mm256_add_pd(r, _mm256_mul_pd(_mm256_mul_pd(r, z), ps));

        __m256d pc = _mm256_set1_pd(trig::c6);
        pc = _mm256_add_pd(_mm256_mul_pd(pc, z), _mm256_set1_pd(trig::c5));
        pc = _mm256_add_pd(_mm256_mul_pd(pc, z), _mm256_set1_pd(trig::c4));
        pc = _mm256_add_pd(_mm256_mul_pd(pc, z), _mm256_set1_pd(trig::c3));
        pc = _mm256_add_pd(_mm256_mul_pd(pc, z), _mm256_set1_pd(trig::c2));
        pc = _mm256_add_pd(_mm256_mul_pd(pc, z), _mm256_set1_pd(trig::c1));
        const __m256d hz = _mm256_mul_pd(half, z);
        const __m256d w = _mm256_sub_pd(one, hz);
        const __m256d cv = _mm256_add_pd(
            w, _mm256_add_pd(_mm256_sub_pd(_mm256_sub_pd(one, w), hz), _mm256_mul_pd(_mm256_mul_pd(z, z), pc)));

        const __m256d odd = _mm256_castsi256_pd(_mm256_cmpeq_epi64(_mm256_and_si256(q, i1), i1));
        const __m256i flip_bits = Cosine ? _mm256_add_epi64(q, i1) : q;
        const __m256d flip = _mm256_castsi256_pd(_mm256_cmpeq_epi64(_mm256_and_si256(flip_bits, i2), i2));
        __m256d v = Cosine ? _mm256_blendv_pd(cv, sv, odd) : _mm256_blendv_pd(sv, cv, odd);
        v = _mm256_xor_pd(v, _mm256_and_pd(flip, sign));
        if (!Cosine)
            v = _mm256_blendv_pd(v, x, _mm256_cmp_pd(x, _mm256_setzero_pd(), _CMP_EQ_OQ));
        _mm256_storeu_pd(out + i, v);
        if (_mm256_movemask_pd(ok) != 0xf) {
            for (std::size_t j = i; j < i + 4; ++j)
                if (!trig::in_range(a[j]))
                    out[j] = Cosine ? std::cos(a[j]) : std::sin(a[j]);
        }
    }
    for (; i < n; ++i) {
        out[i] = Cosine ? trig::cos(a[i]) : trig::sin(a[i]);
    }
}

void sin(std::size_t n, const double* a, double* out)
{
    sincos<false>(n, a, out);
}

void cos(std::size_t n, const double* a, double* out)
{
    sincos<true>(n, a, out);
}

void add_rowvec(std::size_t m, std::size_t n, const double* x, const double* b, double* out)
{
    for (std::size_t i = 0; i < m; ++i) {
        add(n, x + i * n, b, out + i * n);
    }
}

void col_sums(std::size_t m, std::size_t n, const double* x, double* out)
{
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = 0.0;
    }
    for (std::size_t i = 0; i < m; ++i) {
        add(n, out, x + i * n, out);
    }
}

void row_sums(std::size_t m, std::size_t n, const double* x, double* out)
{
    for (std::size_t i = 0; i < m; ++i) {
        out[i] = sum(n, x + i * n);
    }
}

void descend(std::size_t n, double* theta, const double* grad, double scalar_coef, const double* coef)
{
    std::size_t i = 0;
    if (coef) {
        for (; i + 4 <= n; i += 4) {
            const __m256d step = _mm256_mul_pd(_mm256_loadu_pd(coef + i), _mm256_loadu_pd(grad + i));
            _mm256_storeu_pd(theta + i, _mm256_sub_pd(_mm256_loadu_pd(theta + i), step));
        }
        for (; i < n; ++i) {
            theta[i] -= coef[i] * grad[i];
        }
        return;
    }
    const __m256d vc = _mm256_set1_pd(scalar_coef);
    for (; i + 4 <= n; i += 4) {
        const __m256d step = _mm256_mul_pd(vc, _mm256_loadu_pd(grad + i));
        _mm256_storeu_pd(theta + i, _mm256_sub_pd(_mm256_loadu_pd(theta + i), step));
    }
    for (; i < n; ++i) {
        theta[i] -= scalar_coef * grad[i];
    }
}

void ema_square(std::size_t n, double rho, const double* g, double* fisher)
{
    const double w = 1.0 - rho;
    const __m256d vr = _mm256_set1_pd(rho);
    const __m256d vw = _mm256_set1_pd(w);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gv = _mm256_loadu_pd(g + i);
        const __m256d decayed = _mm256_mul_pd(vr, _mm256_loadu_pd(fisher + i));
        const __m256d fresh = _mm256_mul_pd(vw, _mm256_mul_pd(gv, gv));
        _mm256_storeu_pd(fisher + i, _mm256_add_pd(decayed, fresh));
    }
    for (; i < n; ++i) {
        fisher[i] = rho * fisher[i] + w * (g[i] * g[i]);
    }
}

double inverse_quadratic(std::size_t n, const double* g, const double* fisher, double eps)
{
    const __m256d ve = _mm256_set1_pd(eps);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gv = _mm256_loadu_pd(g + i);
        const __m256d den = _mm256_add_pd(_mm256_loadu_pd(fisher + i), ve);
        acc = _mm256_add_pd(acc, _mm256_div_pd(_mm256_mul_pd(gv, gv), den));
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        s += (g[i] * g[i]) / (fisher[i] + eps);
    }
    return s;
}

} // namespace

const KernelTable* avx2_table()
{
    static const KernelTable table{
        "avx2", gemm, add, sub, mul, scale, square, relu, step, sin, cos, axpy, sum, dot,
        add_rowvec, col_sums, row_sums, descend, ema_square, inverse_quadratic,
    };
    return &table;
}

} // namespace mclnf::kernels

#else

namespace mclnf::kernels {

const KernelTable* avx2_table()
{
    return nullptr;
}

} // namespace mclnf::kernels

#endif
