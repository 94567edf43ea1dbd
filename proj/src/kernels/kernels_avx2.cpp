// AVX2/FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; nothing here may run unless cpu_has_avx2() said yes.
//
// f32 inputs are widened to f64 lanes before accumulation, matching the
// scalar kernels' precision. Partial sums are reduced in a fixed lane order,
// so results differ from the scalar reference only by reassociation of the
// f64 accumulation (bounded by the equivalence tests).

#include "sknn/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#define SKNN_X86 1
#include <immintrin.h>
#else
#define SKNN_X86 0
#endif

namespace sknn::kernels::detail {

#if SKNN_X86

namespace {

inline double hsum4(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    __m128d s = _mm_add_pd(lo, hi);                   // (l0+h0, l1+h1)
    s = _mm_add_sd(s, _mm_unpackhi_pd(s, s));
    return _mm_cvtsd_f64(s);
}

double l2sq_f32_avx2(const float* a, const float* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 va = _mm256_loadu_ps(a + i);
        __m256 vb = _mm256_loadu_ps(b + i);
        __m256d a_lo = _mm256_cvtps_pd(_mm256_castps256_ps128(va));
        __m256d a_hi = _mm256_cvtps_pd(_mm256_extractf128_ps(va, 1));
        __m256d b_lo = _mm256_cvtps_pd(_mm256_castps256_ps128(vb));
        __m256d b_hi = _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1));
        __m256d d0 = _mm256_sub_pd(a_lo, b_lo);
        __m256d d1 = _mm256_sub_pd(a_hi, b_hi);
        acc0 = _mm256_fmadd_pd(d0, d0, acc0);
        acc1 = _mm256_fmadd_pd(d1, d1, acc1);
    }
    double acc = hsum4(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

void l2sq_batch_f32_avx2(const float* query, const float* keys, std::size_t dim,
                         std::size_t count, double* out) {
    for (std::size_t r = 0; r < count; ++r) {
        out[r] = l2sq_f32_avx2(query, keys + r * dim, dim);
    }
}

double dot_f64_avx2(const double* a, const double* b, std::size_t n) {
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
    double acc = hsum4(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_f64_avx2(double alpha, const double* x, double* y, std::size_t n) {
    __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

} // namespace

const Ops& avx2_ops() {
    static const Ops table{l2sq_f32_avx2, l2sq_batch_f32_avx2, dot_f64_avx2, axpy_f64_avx2};
    return table;
}

bool cpu_has_avx2() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

#else // !SKNN_X86

const Ops& avx2_ops() { return scalar_ops(); }
bool cpu_has_avx2() { return false; }

#endif

} // namespace sknn::kernels::detail
