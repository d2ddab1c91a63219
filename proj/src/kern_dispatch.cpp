#include "scrl/kern.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "kern_internal.hpp"
#include "scrl/common.hpp"

namespace scrl::kern {
namespace {

bool runtime_avx2() {
#if defined(SCRL_HAVE_AVX2_TU) && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

SimdMode initial_mode() {
  const char* env = std::getenv("SCRL_SIMD");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return SimdMode::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!runtime_avx2())
        throw ConfigError("SCRL_SIMD=avx2 requested but AVX2/FMA is unavailable");
      return SimdMode::avx2;
    }
    // anything else, including "auto", falls through to detection
  }
  return runtime_avx2() ? SimdMode::avx2 : SimdMode::scalar;
}

struct Dispatch {
  SimdMode mode;
  const KernOps* ops;
  Dispatch() : mode(initial_mode()), ops(select(mode)) {}
  static const KernOps* select(SimdMode m) {
#if defined(SCRL_HAVE_AVX2_TU)
    if (m == SimdMode::avx2) return &avx2_ops();
#endif
    return &scalar_ops();
  }
};

Dispatch& dispatch() {
  static Dispatch d;
  return d;
}

}  // namespace

SimdMode active_mode() { return dispatch().mode; }

const char* mode_name() {
  return dispatch().mode == SimdMode::avx2 ? "avx2" : "scalar";
}

bool cpu_has_avx2() { return runtime_avx2(); }

void force_mode(SimdMode m) {
  if (m == SimdMode::avx2 && !runtime_avx2())
    throw ConfigError("cannot force AVX2 kernels: CPU or build lacks AVX2/FMA");
  dispatch().mode = m;
  dispatch().ops = Dispatch::select(m);
}

double dot(const double* a, const double* b, std::size_t n) {
  return dispatch().ops->dot(a, b, n);
}
void matvec(const double* w, const double* x, const double* bias, double* y,
            std::size_t rows, std::size_t cols) {
  dispatch().ops->matvec(w, x, bias, y, rows, cols);
}
void matvec_t_acc(const double* w, const double* dy, double* dx,
                  std::size_t rows, std::size_t cols) {
  dispatch().ops->matvec_t_acc(w, dy, dx, rows, cols);
}
void outer_acc(double* g, const double* dy, const double* x, std::size_t rows,
               std::size_t cols) {
  dispatch().ops->outer_acc(g, dy, x, rows, cols);
}
void axpy(double a, const double* x, double* y, std::size_t n) {
  dispatch().ops->axpy(a, x, y, n);
}
void relu(const double* x, double* y, std::size_t n) {
  dispatch().ops->relu(x, y, n);
}
void relu_mask(const double* act, double* d, std::size_t n) {
  dispatch().ops->relu_mask(act, d, n);
}
void lerp(double* t, const double* online, double tau, std::size_t n) {
  dispatch().ops->lerp(t, online, tau, n);
}
void adam_step(double* p, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, double bc1,
               double bc2) {
  dispatch().ops->adam_step(p, m, v, g, n, lr, beta1, beta2, eps, bc1, bc2);
}
double sq_err(const double* a, const double* b, std::size_t n) {
  return dispatch().ops->sq_err(a, b, n);
}
double norm_l1(const double* x, std::size_t n) { return dispatch().ops->norm_l1(x, n); }
double norm_l2(const double* x, std::size_t n) { return dispatch().ops->norm_l2(x, n); }
double norm_linf(const double* x, std::size_t n) { return dispatch().ops->norm_linf(x, n); }
void minmax_acc(const double* x, double* lo, double* hi, std::size_t n) {
  dispatch().ops->minmax_acc(x, lo, hi, n);
}
void clamp(double* x, double lo, double hi, std::size_t n) {
  dispatch().ops->clamp(x, lo, hi, n);
}

}  // namespace scrl::kern
