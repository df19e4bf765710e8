#include "stiformer/loss.h"

#include <string>
#include <vector>

#include "stiformer/ops.h"

namespace stif {

namespace {

void expect_same_shape(const Tensor& y_hat, const Tensor& y, const char* what) {
  if (y_hat.shape() != y.shape()) {
    throw ShapeError(std::string(what) + ": prediction " + shape_str(y_hat.shape()) +
                     " vs target " + shape_str(y.shape()));
  }
  if (y.dim() != 2) throw ShapeError(std::string(what) + ": expected N x t, got " + shape_str(y.shape()));
}

// Population variance of each column.
std::vector<double> column_variance(const Tensor& x) {
  const std::size_t rows = x.size(0);
  const std::size_t cols = x.size(1);
  const auto v = x.data();
  std::vector<double> mu(cols, 0.0), var(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) mu[c] += v[r * cols + c];
  for (double& m : mu) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = v[r * cols + c] - mu[c];
      var[c] += d * d;
    }
  for (double& s : var) s /= static_cast<double>(rows);
  return var;
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda_m >= 0.0)) throw ParameterError("loss.lambda_m must be non-negative");
  if (!(eps > 0.0)) throw ParameterError("loss.eps must be positive");
}

Tensor mse_loss(const Tensor& y_hat, const Tensor& y) {
  expect_same_shape(y_hat, y, "mse");
  return mean(square(sub(y_hat, y)));
}

Tensor pearson_loss(const Tensor& y_hat, const Tensor& y, double eps) {
  expect_same_shape(y_hat, y, "pearson_loss");
  if (y.size(0) < 2) throw ParameterError("pearson_loss: need at least 2 nodes");
  if (!(eps > 0.0)) throw ParameterError("pearson_loss: eps must be positive");
  const std::size_t steps = y.size(1);

  const std::vector<double> var_hat = column_variance(y_hat);
  const std::vector<double> var_y = column_variance(y);
  std::vector<double> valid(steps), invalid(steps);
  for (std::size_t c = 0; c < steps; ++c) {
    valid[c] = var_hat[c] >= eps && var_y[c] >= eps ? 1.0 : 0.0;
    invalid[c] = 1.0 - valid[c];
  }

  Tensor dp = sub(y_hat, mean_axis(y_hat, 0, true));
  Tensor dy = sub(y, mean_axis(y, 0, true));
  Tensor cov = sum_axis(mul(dp, dy), 0);
  Tensor ss = mul(sum_axis(square(dp), 0), sum_axis(square(dy), 0));
  // Degenerate steps get denominator 1 so neither value nor gradient is NaN.
  Tensor denom = sqrt(add(ss, Tensor::from({steps}, invalid)));
  Tensor corr = mul(div(cov, denom), Tensor::from({steps}, valid));
  return scale(sum(corr), -1.0 / static_cast<double>(steps));
}

Tensor total_loss(const Tensor& y_hat, const Tensor& y, const LossConfig& config) {
  config.validate();
  return add(scale(mse_loss(y_hat, y), config.lambda_m), pearson_loss(y_hat, y, config.eps));
}

}  // namespace stif
