#include "jqas/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace jqas {

template <typename T>
GradCheckReport finite_difference_check(const std::function<Var<T>(const Var<T>&)>& f,
                                        const Tensor<T>& x, double h) {
  Var<T> probe(x, true);
  backward(f(probe));
  Tensor<T> analytic = probe.grad();
  if (analytic.size() != x.size()) analytic = Tensor<T>(x.shape());

  GradCheckReport report;
  NoGradGuard no_grad;
  Tensor<T> shifted = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T original = x[i];
    shifted[i] = static_cast<T>(original + h);
    const double f_plus = f(Var<T>(shifted)).value()[0];
    shifted[i] = static_cast<T>(original - h);
    const double f_minus = f(Var<T>(shifted)).value()[0];
    shifted[i] = original;
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (i == 0 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

template GradCheckReport finite_difference_check<float>(
    const std::function<Var<float>(const Var<float>&)>&, const Tensor<float>&, double);
template GradCheckReport finite_difference_check<double>(
    const std::function<Var<double>(const Var<double>&)>&, const Tensor<double>&, double);

}  // namespace jqas
