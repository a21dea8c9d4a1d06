#include "rego/kernels.hpp"

#include <atomic>

namespace rego::kernels {

namespace scalar {

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = a[i * k + kk];
            const double* brow = b + kk * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            c[i * n + j] += acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = a + kk * m;
        const double* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double aki = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
}

void add(const double* a, const double* b, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

void mul_acc(const double* a, const double* b, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] += a[i] * b[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale(const double* a, double alpha, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = alpha * a[i];
}

double sum(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
void matmul_nn(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void matmul_nt(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void matmul_tn(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void add(const double*, const double*, double*, std::size_t);
void sub(const double*, const double*, double*, std::size_t);
void mul(const double*, const double*, double*, std::size_t);
void mul_acc(const double*, const double*, double*, std::size_t);
void axpy(double, const double*, double*, std::size_t);
void scale(const double*, double, double*, std::size_t);
double sum(const double*, std::size_t);
double dot(const double*, const double*, std::size_t);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
void matmul_nn(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void matmul_nt(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void matmul_tn(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void add(const double*, const double*, double*, std::size_t);
void sub(const double*, const double*, double*, std::size_t);
void mul(const double*, const double*, double*, std::size_t);
void mul_acc(const double*, const double*, double*, std::size_t);
void axpy(double, const double*, double*, std::size_t);
void scale(const double*, double, double*, std::size_t);
double sum(const double*, std::size_t);
double dot(const double*, const double*, std::size_t);
}  // namespace neon
#endif

const CpuCaps& CpuCaps::get() {
    static const CpuCaps caps = [] {
        CpuCaps c;
#if defined(__x86_64__) || defined(_M_X64)
        c.avx2 = __builtin_cpu_supports("avx2");
        c.fma = __builtin_cpu_supports("fma");
#elif defined(__aarch64__)
        c.neon = true;
#endif
        return c;
    }();
    return caps;
}

namespace {
std::atomic<bool> g_force_scalar{false};

bool use_simd(bool force_scalar) {
    if (force_scalar || g_force_scalar.load(std::memory_order_relaxed)) return false;
    const auto& caps = CpuCaps::get();
#if defined(__x86_64__) || defined(_M_X64)
    return caps.avx2 && caps.fma;
#elif defined(__aarch64__)
    return caps.neon;
#else
    (void)caps;
    return false;
#endif
}
}  // namespace

void set_force_scalar(bool on) { g_force_scalar.store(on, std::memory_order_relaxed); }
bool scalar_forced() { return g_force_scalar.load(std::memory_order_relaxed); }

const char* active_kernel_set() {
    if (!use_simd(false)) return "scalar";
#if defined(__x86_64__) || defined(_M_X64)
    return "avx2";
#elif defined(__aarch64__)
    return "neon";
#else
    return "scalar";
#endif
}

#if defined(__x86_64__) || defined(_M_X64)
#define REGO_PICK(name) (use_simd(force_scalar) ? avx2::name : scalar::name)
#elif defined(__aarch64__)
#define REGO_PICK(name) (use_simd(force_scalar) ? neon::name : scalar::name)
#else
#define REGO_PICK(name) (scalar::name)
#endif

MatmulFn matmul_nn(bool force_scalar) { return REGO_PICK(matmul_nn); }
MatmulFn matmul_nt(bool force_scalar) { return REGO_PICK(matmul_nt); }
MatmulFn matmul_tn(bool force_scalar) { return REGO_PICK(matmul_tn); }
Map2Fn add(bool force_scalar) { return REGO_PICK(add); }
Map2Fn sub(bool force_scalar) { return REGO_PICK(sub); }
Map2Fn mul(bool force_scalar) { return REGO_PICK(mul); }
Map2Fn mul_acc(bool force_scalar) { return REGO_PICK(mul_acc); }
AxpyFn axpy(bool force_scalar) { return REGO_PICK(axpy); }
ScaleFn scale(bool force_scalar) { return REGO_PICK(scale); }
ReduceFn sum(bool force_scalar) { return REGO_PICK(sum); }
Reduce2Fn dot(bool force_scalar) { return REGO_PICK(dot); }

#undef REGO_PICK

}  // namespace rego::kernels
