// AVX2/FMA f64 kernel variants. This translation unit is compiled with
// -mavx2 -mfma on x86-64 only; callers must gate on CpuCaps before use.
#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cstddef>

namespace rego::kernels::avx2 {

namespace {
inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}
}  // namespace

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t n4 = n & ~std::size_t(3);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const __m256d va = _mm256_set1_pd(a[i * k + kk]);
            const double* brow = b + kk * n;
            std::size_t j = 0;
            for (; j < n4; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            const double aik = a[i * k + kk];
            for (; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t k4 = k & ~std::size_t(3);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            __m256d vacc = _mm256_setzero_pd();
            std::size_t kk = 0;
            for (; kk < k4; kk += 4)
                vacc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + kk),
                                       _mm256_loadu_pd(brow + kk), vacc);
            double acc = hsum(vacc);
            for (; kk < k; ++kk) acc += arow[kk] * brow[kk];
            c[i * n + j] += acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t n4 = n & ~std::size_t(3);
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = a + kk * m;
        const double* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const __m256d va = _mm256_set1_pd(arow[i]);
            double* crow = c + i * n;
            std::size_t j = 0;
            for (; j < n4; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            const double aki = arow[i];
            for (; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
}

void add(const double* a, const double* b, double* c, std::size_t n) {
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4)
        _mm256_storeu_pd(c + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) c[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* c, std::size_t n) {
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4)
        _mm256_storeu_pd(c + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) c[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* c, std::size_t n) {
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4)
        _mm256_storeu_pd(c + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) c[i] = a[i] * b[i];
}

void mul_acc(const double* a, const double* b, double* c, std::size_t n) {
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4) {
        __m256d vc = _mm256_loadu_pd(c + i);
        vc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), vc);
        _mm256_storeu_pd(c + i, vc);
    }
    for (; i < n; ++i) c[i] += a[i] * b[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale(const double* a, double alpha, double* c, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4)
        _mm256_storeu_pd(c + i, _mm256_mul_pd(va, _mm256_loadu_pd(a + i)));
    for (; i < n; ++i) c[i] = alpha * a[i];
}

double sum(const double* a, std::size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4) vacc = _mm256_add_pd(vacc, _mm256_loadu_pd(a + i));
    double acc = hsum(vacc);
    for (; i < n; ++i) acc += a[i];
    return acc;
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d vacc = _mm256_setzero_pd();
    const std::size_t n4 = n & ~std::size_t(3);
    std::size_t i = 0;
    for (; i < n4; i += 4)
        vacc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), vacc);
    double acc = hsum(vacc);
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace rego::kernels::avx2

#endif  // x86-64
