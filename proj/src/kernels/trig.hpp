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

// sin/cos shared by the scalar and AVX2 tables. Both evaluate the same
// operations in the same order, so results agree bitwise. Arguments beyond
// the reduction limit (and non-finite ones) go to libm.

#include <cmath>
#include <cstdint>

namespace mclnf::kernels::trig {

inline constexpr double two_over_pi = 6.36619772367581382433e-01;
// pi/2 split into 33 + 33 + 53 bits; k * pio2_1 and k * pio2_2 are exact
// for |k| < 2^20.
inline constexpr double pio2_1 = 1.57079632673412561417e+00;
inline constexpr double pio2_2 = 6.07710050630396597660e-11;
inline constexpr double pio2_3 = 2.02226624871116645580e-21;
inline constexpr double limit = 8.0e5;

inline constexpr double s1 = -1.66666666666666324348e-01;
inline constexpr double s2 = 8.33333333332248946124e-03;
inline constexpr double s3 = -1.98412698298579493134e-04;
inline constexpr double s4 = 2.75573137070700676789e-06;
inline constexpr double s5 = -2.50507602534068634195e-08;
inline constexpr double s6 = 1.58969099521155010221e-10;

inline constexpr double c1 = 4.16666666666666019037e-02;
inline constexpr double c2 = -1.38888888888741095749e-03;
inline constexpr double c3 = 2.48015872894767294178e-05;
inline constexpr double c4 = -2.75573143513906633035e-07;
inline constexpr double c5 = 2.08757232129817482790e-09;
inline constexpr double c6 = -1.13596475577881948265e-11;

inline bool in_range(double x)
{
    return std::fabs(x) <= limit;
}

// r in [-pi/4, pi/4] and the quadrant k mod 4.
inline double reduce(double x, std::int64_t& quadrant)
{
    const double k = std::nearbyint(x * two_over_pi);
    double r = x - k * pio2_1;
    r = r - k * pio2_2;
    r = r - k * pio2_3;
    quadrant = static_cast<std::int64_t>(k) & 3;
    return r;
}

inline double poly_sin(double r)
{
    const double z = r * r;
    double p = s6;
    p = p * z + s5;
    p = p * z + s4;
    p = p * z + s3;
    p = p * z + s2;
    p = p * z + s1;
    return r + (r * z) * p;
}

inline double poly_cos(double r)
{
    const double z = r * r;
    double p = c6;
    p = p * z + c5;
    p = p * z + c4;
    p = p * z + c3;
    p = p * z + c2;
    p = p * z + c1;
    const double hz = 0.5 * z;
    const double w = 1.0 - hz;
    return w + (((1.0 - w) - hz) + (z * z) * p);
}

inline double sin(double x)
{
    if (!in_range(x))
        return std::sin(x);
    // the polynomial would turn -0 into +0
    if (x == 0.0)
        return x;
    std::int64_t q = 0;
    const double r = reduce(x, q);
    const double s = poly_sin(r);
    const double c = poly_cos(r);
    const double v = (q & 1) ? c : s;
    return (q & 2) ? -v : v;
}

inline double cos(double x)
{
    if (!in_range(x))
        return std::cos(x);
    std::int64_t q = 0;
    const double r = reduce(x, q);
    const double s = poly_sin(r);
    const double c = poly_cos(r);
    const double v = (q & 1) ? s : c;
    return ((q + 1) & 2) ? -v : v;
}

} // namespace mclnf::kernels::trig
