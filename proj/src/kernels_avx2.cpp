// AVX2 kernel variants. Built with -mavx2 -mfma -ffp-contract=off in a
// separate translation unit; everything else stays baseline x86-64 so the
// binary runs on machines without AVX2 (dispatch happens in kernels.cpp).
//
// Elementwise kernels use separate mul/add intrinsics, never FMA, so their
// per-element results are bit-identical to the scalar reference. Reductions
// use four lane accumulators plus FMA and are only tolerance-equivalent.

#include "rfrec/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define RFREC_HAVE_AVX2_BUILD 1
#include <immintrin.h>
#else
#define RFREC_HAVE_AVX2_BUILD 0
#endif

#include <cmath>
#include <limits>

namespace rfrec::kern::avx2 {

#if RFREC_HAVE_AVX2_BUILD

bool available() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

namespace {
inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}
}  // namespace

double dot(const double* x, const double* y, std::size_t n) {
    __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
    __m256d a2 = _mm256_setzero_pd(), a3 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
        a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), a1);
        a2 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 8), _mm256_loadu_pd(y + i + 8), a2);
        a3 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 12), _mm256_loadu_pd(y + i + 12), a3);
    }
    for (; i + 4 <= n; i += 4)
        a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
    double s = hsum(_mm256_add_pd(_mm256_add_pd(a0, a1), _mm256_add_pd(a2, a3)));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

double sq_norm(const double* x, std::size_t n) { return dot(x, x, n); }

double sq_dist(const double* x, const double* y, std::size_t n) {
    __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4));
        a0 = _mm256_fmadd_pd(d0, d0, a0);
        a1 = _mm256_fmadd_pd(d1, d1, a1);
    }
    for (; i + 4 <= n; i += 4) {
        __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        a0 = _mm256_fmadd_pd(d, d, a0);
    }
    double s = hsum(_mm256_add_pd(a0, a1));
    for (; i < n; ++i) {
        double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d p = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), p));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void add(double* y, const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] += x[i];
}

void scal(double a, double* x, std::size_t n) {
    __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

void toward(double* y, double c, const double* t, std::size_t n) {
    __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        __m256d diff = _mm256_sub_pd(vy, _mm256_loadu_pd(t + i));
        _mm256_storeu_pd(y + i, _mm256_sub_pd(vy, _mm256_mul_pd(vc, diff)));
    }
    for (; i < n; ++i) y[i] -= c * (y[i] - t[i]);
}

void clamp(const double* x, double lo, double hi, double* out, std::size_t n) {
    __m256d vlo = _mm256_set1_pd(lo), vhi = _mm256_set1_pd(hi);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i,
                         _mm256_max_pd(_mm256_min_pd(_mm256_loadu_pd(x + i), vhi), vlo));
    for (; i < n; ++i) {
        double v = x[i] < hi ? x[i] : hi;
        out[i] = v > lo ? v : lo;
    }
}

bool all_finite(const double* x, std::size_t n) {
    // finite iff |x| < inf; unordered compare also catches NaN
    __m256d inf = _mm256_set1_pd(std::numeric_limits<double>::infinity());
    __m256d absmask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_and_pd(_mm256_loadu_pd(x + i), absmask);
        __m256d bad = _mm256_cmp_pd(v, inf, _CMP_NLT_UQ);
        if (_mm256_movemask_pd(bad)) return false;
    }
    for (; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

#else  // !RFREC_HAVE_AVX2_BUILD

bool available() { return false; }
double dot(const double* x, const double* y, std::size_t n) { return scalar::dot(x, y, n); }
double sq_norm(const double* x, std::size_t n) { return scalar::sq_norm(x, n); }
double sq_dist(const double* x, const double* y, std::size_t n) { return scalar::sq_dist(x, y, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { scalar::axpy(a, x, y, n); }
void add(double* y, const double* x, std::size_t n) { scalar::add(y, x, n); }
void scal(double a, double* x, std::size_t n) { scalar::scal(a, x, n); }
void toward(double* y, double c, const double* t, std::size_t n) { scalar::toward(y, c, t, n); }
void clamp(const double* x, double lo, double hi, double* out, std::size_t n) {
    scalar::clamp(x, lo, hi, out, n);
}
bool all_finite(const double* x, std::size_t n) { return scalar::all_finite(x, n); }

#endif

}  // namespace rfrec::kern::avx2
