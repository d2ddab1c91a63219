#include <algorithm>
#include <cmath>
#include <cstddef>

#include "kern_internal.hpp"

namespace scrl::kern {
namespace {

double s_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void s_matvec(const double* w, const double* x, const double* bias, double* y,
              std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = bias ? bias[r] : 0.0;
    const double* wr = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

void s_matvec_t_acc(const double* w, const double* dy, double* dx,
                    std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w + r * cols;
    const double d = dy[r];
    for (std::size_t c = 0; c < cols; ++c) dx[c] += wr[c] * d;
  }
}

void s_outer_acc(double* g, const double* dy, const double* x,
                 std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* gr = g + r * cols;
    const double d = dy[r];
    for (std::size_t c = 0; c < cols; ++c) gr[c] += d * x[c];
  }
}

void s_axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_relu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void s_relu_mask(const double* act, double* d, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(act[i] > 0.0)) d[i] = 0.0;
}

void s_lerp(double* t, const double* online, double tau, std::size_t n) {
  const double keep = 1.0 - tau;
  for (std::size_t i = 0; i < n; ++i) t[i] = tau * online[i] + keep * t[i];
}

void s_adam_step(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

double s_sq_err(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double s_norm_l1(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(x[i]);
  return acc;
}

double s_norm_l2(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return std::sqrt(acc);
}

double s_norm_linf(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc = std::max(acc, std::fabs(x[i]));
  return acc;
}

void s_minmax_acc(const double* x, double* lo, double* hi, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = std::min(lo[i], x[i]);
    hi[i] = std::max(hi[i], x[i]);
  }
}

void s_clamp(double* x, double lo, double hi, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = std::min(hi, std::max(lo, x[i]));
}

}  // namespace

const KernOps& scalar_ops() {
  static const KernOps ops = {
      s_dot,     s_matvec,    s_matvec_t_acc, s_outer_acc, s_axpy,
      s_relu,    s_relu_mask, s_lerp,         s_adam_step, s_sq_err,
      s_norm_l1, s_norm_l2,   s_norm_linf,    s_minmax_acc, s_clamp,
  };
  return ops;
}

}  // namespace scrl::kern
