#pragma once

#include <cstddef>

// Arithmetic kernels used by the dense inner loops (network training, residual
// norms, range boxes). Every kernel has a scalar reference implementation and
// an AVX2 variant; the active variant is picked once at startup from CPU
// capability and can be overridden with SCRL_SIMD=scalar|avx2|auto or
// force_mode(). Scalar and SIMD variants are equivalence-tested against each
// other in tests/test_kern.cpp.
namespace scrl::kern {

enum class SimdMode { scalar, avx2 };

SimdMode active_mode();
const char* mode_name();
bool cpu_has_avx2();
// Test hook. Throws scrl::ConfigError when the requested mode is unsupported.
void force_mode(SimdMode m);

double dot(const double* a, const double* b, std::size_t n);

// y = W x + b, W row-major (rows x cols); bias may be null.
void matvec(const double* w, const double* x, const double* bias, double* y,
            std::size_t rows, std::size_t cols);

// dx += W^T dy
void matvec_t_acc(const double* w, const double* dy, double* dx,
                  std::size_t rows, std::size_t cols);

// G += dy x^T, G row-major (rows x cols)
void outer_acc(double* g, const double* dy, const double* x,
               std::size_t rows, std::size_t cols);

// y += a x
void axpy(double a, const double* x, double* y, std::size_t n);

// y = max(x, 0)
void relu(const double* x, double* y, std::size_t n);

// d[i] = act[i] > 0 ? d[i] : 0  (ReLU derivative mask from the activation)
void relu_mask(const double* act, double* d, std::size_t n);

// t = tau * online + (1 - tau) * t  (target-network soft update)
void lerp(double* t, const double* online, double tau, std::size_t n);

// Adam update with externally supplied bias corrections bc1 = 1 - beta1^t,
// bc2 = 1 - beta2^t:
//   m = beta1 m + (1-beta1) g;  v = beta2 v + (1-beta2) g^2
//   p -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
void adam_step(double* p, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps,
               double bc1, double bc2);

// sum((a - b)^2)
double sq_err(const double* a, const double* b, std::size_t n);

double norm_l1(const double* x, std::size_t n);
double norm_l2(const double* x, std::size_t n);
double norm_linf(const double* x, std::size_t n);

// lo = min(lo, x), hi = max(hi, x), elementwise
void minmax_acc(const double* x, double* lo, double* hi, std::size_t n);

void clamp(double* x, double lo, double hi, std::size_t n);

}  // namespace scrl::kern
