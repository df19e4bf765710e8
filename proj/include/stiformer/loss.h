#pragma once

#include "stiformer/tensor.h"

namespace stif {

struct LossConfig {
  double lambda_m = 0.1;  // weight of the MSE term
  double eps = 1e-8;      // variance floor for the correlation term

  void validate() const;
};

/// Mean squared error over all N x t elements.
Tensor mse_loss(const Tensor& y_hat, const Tensor& y);

/// Negative cross-sectional Pearson correlation, computed per horizon step
/// across the N nodes and averaged over steps. A step where either side's
/// population variance is below eps contributes 0.
Tensor pearson_loss(const Tensor& y_hat, const Tensor& y, double eps = 1e-8);

/// lambda_m * mse + pearson.
Tensor total_loss(const Tensor& y_hat, const Tensor& y, const LossConfig& config = {});

}  // namespace stif
