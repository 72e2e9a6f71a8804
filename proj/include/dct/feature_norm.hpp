#pragma once

// Row-wise L2 normalization onto the unit hypersphere. Any two outputs are at
// Euclidean distance <= 2.

#include <cmath>
#include <string>
#include <vector>

#include "dct/matrix.hpp"

namespace dct {

inline constexpr double kMinRowNorm = 1e-12;

struct FeatureNormCache {
  Matrix unit_rows;
  std::vector<double> norms;
};

struct FeatureNormForward {
  Matrix output;
  FeatureNormCache cache;
};

inline FeatureNormForward feature_normalize_forward(const Matrix& batch) {
  FeatureNormForward fwd{Matrix(batch.rows(), batch.cols()),
                         FeatureNormCache{Matrix(), std::vector<double>(batch.rows())}};
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    double sq = 0.0;
    for (double v : batch.row(i)) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!(norm >= kMinRowNorm)) {
      throw Error("degenerate_row", "row " + std::to_string(i) + " has near-zero norm");
    }
    fwd.cache.norms[i] = norm;
    auto src = batch.row(i);
    auto dst = fwd.output.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] / norm;
  }
  fwd.cache.unit_rows = fwd.output;
  return fwd;
}

/// Applies (I - x̂x̂ᵀ) / ‖x‖ to each upstream row.
inline Matrix feature_normalize_backward(const FeatureNormCache& cache, const Matrix& upstream) {
  cache.unit_rows.require_same_shape(upstream, "feature_normalize_backward");
  Matrix grad(upstream.rows(), upstream.cols());
  for (std::size_t i = 0; i < upstream.rows(); ++i) {
    const auto unit = cache.unit_rows.row(i);
    const auto up = upstream.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < up.size(); ++j) dot += unit[j] * up[j];
    auto out = grad.row(i);
    const double inv_norm = 1.0 / cache.norms[i];
    for (std::size_t j = 0; j < up.size(); ++j) out[j] = (up[j] - dot * unit[j]) * inv_norm;
  }
  return grad;
}

}  // namespace dct
