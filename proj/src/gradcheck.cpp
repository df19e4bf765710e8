#include "stiformer/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace stif {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const double value = f().item();
  if (!std::isfinite(value)) throw NumericError("grad_check: objective is not finite");
  return value;
}

void compare(double analytic, double numeric, GradCheckReport& report) {
  const double abs_err = std::abs(analytic - numeric);
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckRelFloor});
  report.max_abs_err = std::max(report.max_abs_err, abs_err);
  report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
}

}  // namespace

GradCheckReport grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params,
                                  double h) {
  if (!(h > 0.0)) throw ParameterError("grad_check: step h must be positive");
  for (Tensor& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw ParameterError("grad_check: parameters must be requires_grad leaves");
    }
    p.zero_grad();
  }
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: objective is not finite");
  loss.backward();

  GradCheckReport report;
  for (Tensor& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate(f);
      values[i] = saved - h;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      compare(analytic.empty() ? 0.0 : analytic[i], numeric, report);
      ++report.param_count;
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h) {
  Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  Tensor params[] = {leaf};
  return grad_check_params([&] { return f(leaf); }, params, h);
}

}  // namespace stif
