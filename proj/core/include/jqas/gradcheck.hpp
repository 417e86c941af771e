#pragma once

#include <cstddef>
#include <functional>

#include "jqas/autograd.hpp"

namespace jqas {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Compares the reverse-mode gradient of scalar `f` at `x` with central
/// differences of step `h`. Relative error uses max(|a|, |b|, 1e-8) as the
/// denominator.
template <typename T>
GradCheckReport finite_difference_check(const std::function<Var<T>(const Var<T>&)>& f,
                                        const Tensor<T>& x, double h);

}  // namespace jqas
