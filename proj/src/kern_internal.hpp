#pragma once

#include <cstddef>

namespace scrl::kern {

struct KernOps {
  double (*dot)(const double*, const double*, std::size_t);
  void (*matvec)(const double*, const double*, const double*, double*,
                 std::size_t, std::size_t);
  void (*matvec_t_acc)(const double*, const double*, double*, std::size_t,
                       std::size_t);
  void (*outer_acc)(double*, const double*, const double*, std::size_t,
                    std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*relu)(const double*, double*, std::size_t);
  void (*relu_mask)(const double*, double*, std::size_t);
  void (*lerp)(double*, const double*, double, std::size_t);
  void (*adam_step)(double*, double*, double*, const double*, std::size_t,
                    double, double, double, double, double, double);
  double (*sq_err)(const double*, const double*, std::size_t);
  double (*norm_l1)(const double*, std::size_t);
  double (*norm_l2)(const double*, std::size_t);
  double (*norm_linf)(const double*, std::size_t);
  void (*minmax_acc)(const double*, double*, double*, std::size_t);
  void (*clamp)(double*, double, double, std::size_t);
};

const KernOps& scalar_ops();
#if defined(SCRL_HAVE_AVX2_TU)
const KernOps& avx2_ops();
#endif

}  // namespace scrl::kern
