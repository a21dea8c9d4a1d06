#pragma once

#include <cstddef>

// Dense f64 inner-loop kernels. Every kernel has a scalar reference
// implementation plus SIMD variants (AVX2 on x86-64, NEON on aarch64)
// selected at runtime from CPU capabilities. The scalar path is the
// semantic reference; SIMD variants are equivalence-tested against it.
namespace rego::kernels {

struct CpuCaps {
    bool avx2 = false;
    bool fma = false;
    bool neon = false;
    static const CpuCaps& get();
};

// Process-wide override, mainly for debugging and the equivalence suite.
void set_force_scalar(bool on);
bool scalar_forced();

// Matrix kernels accumulate into c so the same entry points serve both
// forward products (zeroed destination) and gradient accumulation.
//   nn: c[m x n] += a[m x k] * b[k x n]
//   nt: c[m x n] += a[m x k] * b[n x k]^T
//   tn: c[m x n] += a[k x m]^T * b[k x n]
using MatmulFn = void (*)(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n);

using Map2Fn = void (*)(const double* a, const double* b, double* c, std::size_t n);
using AxpyFn = void (*)(double alpha, const double* x, double* y, std::size_t n);
using ScaleFn = void (*)(const double* a, double alpha, double* c, std::size_t n);
using ReduceFn = double (*)(const double* a, std::size_t n);
using Reduce2Fn = double (*)(const double* a, const double* b, std::size_t n);

MatmulFn matmul_nn(bool force_scalar = false);
MatmulFn matmul_nt(bool force_scalar = false);
MatmulFn matmul_tn(bool force_scalar = false);

Map2Fn add(bool force_scalar = false);        // c = a + b
Map2Fn sub(bool force_scalar = false);        // c = a - b
Map2Fn mul(bool force_scalar = false);        // c = a * b
Map2Fn mul_acc(bool force_scalar = false);    // c += a * b
AxpyFn axpy(bool force_scalar = false);       // y += alpha * x
ScaleFn scale(bool force_scalar = false);     // c = alpha * a
ReduceFn sum(bool force_scalar = false);
Reduce2Fn dot(bool force_scalar = false);

// Name of the kernel set the dispatcher picks ("avx2", "neon", "scalar").
const char* active_kernel_set();

// Scalar reference implementations, exposed for the equivalence tests.
namespace scalar {
void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void add(const double* a, const double* b, double* c, std::size_t n);
void sub(const double* a, const double* b, double* c, std::size_t n);
void mul(const double* a, const double* b, double* c, std::size_t n);
void mul_acc(const double* a, const double* b, double* c, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(const double* a, double alpha, double* c, std::size_t n);
double sum(const double* a, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
}  // namespace scalar

}  // namespace rego::kernels
