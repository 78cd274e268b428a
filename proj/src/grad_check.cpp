#include "tqd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "tqd/errors.hpp"

namespace tqd {

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           Tensor x, double eps, double tol, double floor) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  if (!x.requires_grad()) {
    throw ContractError("grad_check: x must be a requires-grad leaf");
  }

  x.zero_grad();
  Tensor y = f(x);
  y.backward();
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  GradCheckReport report;
  auto values = x.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = f(x).item();
    values[i] = saved - eps;
    const double down = f(x).item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);

    const double abs_err = std::abs(analytic[i] - numeric);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double rel = abs_err / denom;
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
    ++report.checked;
  }
  x.zero_grad();
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace tqd
