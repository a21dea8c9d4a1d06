// NEON (ASIMD) f64 kernel variants for aarch64.
#if defined(__aarch64__)

#include <arm_neon.h>

#include <cstddef>

namespace rego::kernels::neon {

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const float64x2_t va = vdupq_n_f64(a[i * k + kk]);
            const double* brow = b + kk * n;
            std::size_t j = 0;
            for (; j < n2; j += 2) {
                float64x2_t vc = vld1q_f64(crow + j);
                vc = vfmaq_f64(vc, va, vld1q_f64(brow + j));
                vst1q_f64(crow + j, vc);
            }
            const double aik = a[i * k + kk];
            for (; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t k2 = k & ~std::size_t(1);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            float64x2_t vacc = vdupq_n_f64(0.0);
            std::size_t kk = 0;
            for (; kk < k2; kk += 2)
                vacc = vfmaq_f64(vacc, vld1q_f64(arow + kk), vld1q_f64(brow + kk));
            double acc = vaddvq_f64(vacc);
            for (; kk < k; ++kk) acc += arow[kk] * brow[kk];
            c[i * n + j] += acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = a + kk * m;
        const double* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const float64x2_t va = vdupq_n_f64(arow[i]);
            double* crow = c + i * n;
            std::size_t j = 0;
            for (; j < n2; j += 2) {
                float64x2_t vc = vld1q_f64(crow + j);
                vc = vfmaq_f64(vc, va, vld1q_f64(brow + j));
                vst1q_f64(crow + j, vc);
            }
            const double aki = arow[i];
            for (; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
}

void add(const double* a, const double* b, double* c, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) vst1q_f64(c + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) c[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* c, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) vst1q_f64(c + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) c[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* c, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) vst1q_f64(c + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) c[i] = a[i] * b[i];
}

void mul_acc(const double* a, const double* b, double* c, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) {
        float64x2_t vc = vld1q_f64(c + i);
        vc = vfmaq_f64(vc, vld1q_f64(a + i), vld1q_f64(b + i));
        vst1q_f64(c + i, vc);
    }
    for (; i < n; ++i) c[i] += a[i] * b[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) {
        float64x2_t vy = vld1q_f64(y + i);
        vy = vfmaq_f64(vy, va, vld1q_f64(x + i));
        vst1q_f64(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale(const double* a, double alpha, double* c, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) vst1q_f64(c + i, vmulq_f64(va, vld1q_f64(a + i)));
    for (; i < n; ++i) c[i] = alpha * a[i];
}

double sum(const double* a, std::size_t n) {
    float64x2_t vacc = vdupq_n_f64(0.0);
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2) vacc = vaddq_f64(vacc, vld1q_f64(a + i));
    double acc = vaddvq_f64(vacc);
    for (; i < n; ++i) acc += a[i];
    return acc;
}

double dot(const double* a, const double* b, std::size_t n) {
    float64x2_t vacc = vdupq_n_f64(0.0);
    const std::size_t n2 = n & ~std::size_t(1);
    std::size_t i = 0;
    for (; i < n2; i += 2)
        vacc = vfmaq_f64(vacc, vld1q_f64(a + i), vld1q_f64(b + i));
    double acc = vaddvq_f64(vacc);
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace rego::kernels::neon

#endif  // aarch64
