#pragma once

// Batch normalization without an additive shift term (BNNeck style).
//
// Train mode normalizes each embedding dimension with the batch mean and the
// biased (1/N) batch variance, then scales by gamma. Running statistics are a
// convex combination updated with `momentum`; they are never bias-corrected.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dct/matrix.hpp"

namespace dct {

struct BatchNormState {
  std::vector<double> gamma;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t dim, double momentum_ = 0.1, double eps_ = 1e-5)
      : gamma(dim, 1.0), running_mean(dim, 0.0), running_var(dim, 1.0), momentum(momentum_),
        eps(eps_) {}

  std::size_t dim() const noexcept { return gamma.size(); }

  void validate() const {
    if (running_mean.size() != gamma.size() || running_var.size() != gamma.size()) {
      throw Error("invalid_batch_norm", "batch norm vectors disagree in length");
    }
    // eps = 0 is tolerated for exact hand-checked cases; negative eps is not.
    if (!(eps >= 0.0) || !(momentum > 0.0 && momentum <= 1.0)) {
      throw Error("invalid_batch_norm", "batch norm requires eps >= 0 and momentum in (0, 1]");
    }
    for (double v : running_var) {
      if (!(v >= 0.0)) throw Error("invalid_batch_norm", "running variance must be >= 0");
    }
  }

  friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

struct BatchNormCache {
  Matrix normalized;            // x_hat, before gamma
  std::vector<double> inv_std;  // 1 / sqrt(var + eps) per dim
  std::vector<double> gamma;
  bool train_mode = false;
};

struct BatchNormForward {
  Matrix output;
  BatchNormCache cache;
};

struct BatchNormGrads {
  Matrix input_grad;
  std::vector<double> gamma_grad;
};

inline BatchNormForward nobias_bn_forward(BatchNormState& state, const Matrix& batch,
                                          bool train_mode) {
  state.validate();
  const std::size_t n = batch.rows();
  const std::size_t dim = batch.cols();
  if (dim != state.dim()) {
    throw Error("shape_mismatch", "batch norm expects " + std::to_string(state.dim()) +
                                      " columns, got " + std::to_string(dim));
  }
  if (train_mode && n < 2) {
    throw Error("batch_too_small", "train-mode batch norm needs at least 2 rows");
  }

  BatchNormForward fwd{Matrix(n, dim), BatchNormCache{Matrix(n, dim), std::vector<double>(dim),
                                                      state.gamma, train_mode}};
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    double var = 0.0;
    if (train_mode) {
      for (std::size_t i = 0; i < n; ++i) mean += batch(i, j);
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = batch(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
    } else {
      mean = state.running_mean[j];
      var = state.running_var[j];
    }
    const double denom = var + state.eps;
    if (!(denom > 0.0)) {
      throw Error("degenerate_batch", "zero variance in dimension " + std::to_string(j) +
                                          " with eps = 0");
    }
    const double inv_std = 1.0 / std::sqrt(denom);
    fwd.cache.inv_std[j] = inv_std;
    for (std::size_t i = 0; i < n; ++i) {
      const double xhat = (batch(i, j) - mean) * inv_std;
      fwd.cache.normalized(i, j) = xhat;
      fwd.output(i, j) = state.gamma[j] * xhat;
    }
    if (train_mode) {
      state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean;
      state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * var;
    }
  }
  return fwd;
}

/// Train-mode caches give the exact gradient through the batch statistics
/// (mean and variance are both functions of the batch). Eval-mode caches give
/// the gradient of the fixed affine map defined by the running statistics.
inline BatchNormGrads nobias_bn_backward(const BatchNormCache& cache, const Matrix& upstream) {
  cache.normalized.require_same_shape(upstream, "nobias_bn_backward");
  const std::size_t n = upstream.rows();
  const std::size_t dim = upstream.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  BatchNormGrads grads{Matrix(n, dim), std::vector<double>(dim, 0.0)};
  for (std::size_t j = 0; j < dim; ++j) {
    double sum_g = 0.0;
    double sum_g_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_g += upstream(i, j);
      sum_g_xhat += upstream(i, j) * cache.normalized(i, j);
    }
    grads.gamma_grad[j] = sum_g_xhat;
    const double scale = cache.gamma[j] * cache.inv_std[j];
    if (!cache.train_mode) {
      for (std::size_t i = 0; i < n; ++i) grads.input_grad(i, j) = scale * upstream(i, j);
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      grads.input_grad(i, j) =
          scale * (upstream(i, j) - inv_n * sum_g - cache.normalized(i, j) * inv_n * sum_g_xhat);
    }
  }
  return grads;
}

}  // namespace dct
