#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dct/matrix.hpp"
#include "dct/model.hpp"

namespace dct {

inline constexpr std::size_t kDefaultNeighbors = 10;

/// Mean fraction of each point's k nearest neighbours (self excluded) that
/// share its label. Distance ties go to the lower index.
inline double knn_purity(const Matrix& embeddings, std::span<const int> labels, std::size_t k) {
  const std::size_t n = embeddings.rows();
  if (labels.size() != n) throw Error("shape_mismatch", "label count != embedding rows");
  if (k == 0 || k >= n) {
    throw Error("invalid_argument", "k must satisfy 1 <= k < n (k = " + std::to_string(k) +
                                        ", n = " + std::to_string(n) + ")");
  }
  const Matrix sq = pairwise_sq_distances(embeddings);
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(n - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.emplace_back(sq(i, j), j);
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::size_t same = 0;
    for (std::size_t t = 0; t < k; ++t) same += labels[order[t].second] == labels[i] ? 1 : 0;
    total += static_cast<double>(same) / static_cast<double>(k);
  }
  return total / static_cast<double>(n);
}

/// Mean silhouette with Euclidean distance; members of singleton clusters
/// score 0.
inline double silhouette(const Matrix& embeddings, std::span<const int> labels) {
  const std::size_t n = embeddings.rows();
  if (labels.size() != n) throw Error("shape_mismatch", "label count != embedding rows");
  std::map<int, std::size_t> cluster_index;
  for (int l : labels) cluster_index.emplace(l, 0);
  if (cluster_index.size() < 2) {
    throw Error("too_few_labels", "silhouette needs at least 2 distinct labels");
  }
  std::size_t next = 0;
  for (auto& [label, idx] : cluster_index) idx = next++;
  std::vector<std::size_t> cluster(n);
  std::vector<std::size_t> counts(cluster_index.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    cluster[i] = cluster_index.at(labels[i]);
    ++counts[cluster[i]];
  }

  const Matrix sq = pairwise_sq_distances(embeddings);
  std::vector<double> sums(counts.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[cluster[i]] < 2) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[cluster[j]] += std::sqrt(sq(i, j));
    }
    const double a = sums[cluster[i]] / static_cast<double>(counts[cluster[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (c != cluster[i]) b = std::min(b, sums[c] / static_cast<double>(counts[c]));
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

/// Top-1 accuracy; argmax ties go to the lowest class index.
inline double accuracy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) throw Error("shape_mismatch", "label count != logits rows");
  if (logits.rows() == 0) throw Error("invalid_argument", "accuracy of an empty batch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

struct DispersionReport {
  double class_silhouette = 0.0;
  double domain_silhouette = 0.0;
  double class_knn_purity = 0.0;
  double domain_knn_purity = 0.0;
  std::size_t k = kDefaultNeighbors;

  friend bool operator==(const DispersionReport&, const DispersionReport&) = default;
};

/// k is clamped to n - 1 for small sets.
inline DispersionReport dispersion_report(const Matrix& embeddings, std::span<const int> class_labels,
                                          std::span<const int> domain_labels,
                                          std::size_t k = kDefaultNeighbors) {
  if (embeddings.rows() < 2) throw Error("invalid_argument", "dispersion report needs >= 2 points");
  const std::size_t kk = std::min(k, embeddings.rows() - 1);
  DispersionReport r;
  r.k = kk;
  r.class_silhouette = silhouette(embeddings, class_labels);
  r.domain_silhouette = silhouette(embeddings, domain_labels);
  r.class_knn_purity = knn_purity(embeddings, class_labels, kk);
  r.domain_knn_purity = knn_purity(embeddings, domain_labels, kk);
  return r;
}

}  // namespace dct
