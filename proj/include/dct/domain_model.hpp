#pragma once

// Synthetic multi-domain data: x = s_B * class_mean[c] + s_A * domain_offset[d]
// + N(0, sigma^2 I), plus Wasserstein diagnostics comparing how far apart the
// domain-conditional and class-conditional marginals are.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dct/matrix.hpp"

namespace dct {

struct LabeledSample {
  std::vector<double> features;
  int class_id = 0;
  int domain_id = 0;
};

/// Column-oriented labeled dataset; row i is one LabeledSample.
struct Dataset {
  Matrix features;
  std::vector<int> class_ids;
  std::vector<int> domain_ids;

  std::size_t size() const noexcept { return class_ids.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  LabeledSample sample(std::size_t i) const {
    const auto row = features.row(i);
    return {std::vector<double>(row.begin(), row.end()), class_ids[i], domain_ids[i]};
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out{gather_rows(features, indices), {}, {}};
    out.class_ids.reserve(indices.size());
    out.domain_ids.reserve(indices.size());
    for (std::size_t i : indices) {
      out.class_ids.push_back(class_ids[i]);
      out.domain_ids.push_back(domain_ids[i]);
    }
    return out;
  }

  /// Rows whose domain is (keep == true) or is not (keep == false) `domain`.
  Dataset filter_domain(int domain, bool keep) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i) {
      if ((domain_ids[i] == domain) == keep) idx.push_back(i);
    }
    return subset(idx);
  }

  void validate() const {
    if (class_ids.size() != features.rows() || domain_ids.size() != features.rows()) {
      throw Error("invalid_dataset", "label counts do not match feature rows");
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct MixtureSpec {
  std::size_t feature_dim = 16;
  std::size_t num_classes = 4;
  std::size_t num_domains = 4;
  std::vector<std::vector<double>> class_means;
  std::vector<std::vector<double>> domain_offsets;
  double noise_sigma = 0.5;
  double class_scale = 1.0;   // s_B
  double domain_scale = 4.0;  // s_A

  void validate() const {
    if (feature_dim == 0 || num_classes == 0 || num_domains == 0) {
      throw Error("invalid_spec", "mixture dimensions must be positive");
    }
    if (class_means.size() != num_classes || domain_offsets.size() != num_domains) {
      throw Error("invalid_spec", "mean/offset counts do not match class/domain counts");
    }
    for (const auto& v : class_means) {
      if (v.size() != feature_dim) throw Error("invalid_spec", "class mean has wrong dimension");
    }
    for (const auto& v : domain_offsets) {
      if (v.size() != feature_dim) throw Error("invalid_spec", "domain offset has wrong dimension");
    }
    if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) {
      throw Error("invalid_spec", "noise_sigma must be > 0");
    }
    if (!(class_scale >= 0.0) || !(domain_scale >= 0.0)) {
      throw Error("invalid_spec", "signal scales must be >= 0");
    }
  }
};

/// Scalar knobs of a mixture; the geometry (unit directions) comes from a seed.
struct MixtureShape {
  std::size_t feature_dim = 16;
  std::size_t num_classes = 4;
  std::size_t num_domains = 4;
  double noise_sigma = 0.5;
  double class_scale = 1.0;
  double domain_scale = 4.0;
};

inline std::vector<double> random_unit_vector(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm < 1e-8) {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
  }
  for (double& x : v) x /= norm;
  return v;
}

/// Class means and domain offsets are independent random unit directions.
inline MixtureSpec make_mixture_spec(const MixtureShape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MixtureSpec spec{shape.feature_dim, shape.num_classes, shape.num_domains, {}, {},
                   shape.noise_sigma, shape.class_scale, shape.domain_scale};
  for (std::size_t c = 0; c < shape.num_classes; ++c) {
    spec.class_means.push_back(random_unit_vector(shape.feature_dim, rng));
  }
  for (std::size_t d = 0; d < shape.num_domains; ++d) {
    spec.domain_offsets.push_back(random_unit_vector(shape.feature_dim, rng));
  }
  spec.validate();
  return spec;
}

inline std::vector<double> cell_mean(const MixtureSpec& spec, std::size_t c, std::size_t d) {
  std::vector<double> mean(spec.feature_dim);
  for (std::size_t k = 0; k < spec.feature_dim; ++k) {
    mean[k] = spec.class_scale * spec.class_means[c][k] + spec.domain_scale * spec.domain_offsets[d][k];
  }
  return mean;
}

/// n_per_cell samples for every (class, domain) cell, class-major order.
inline Dataset sample_dataset(const MixtureSpec& spec, std::size_t n_per_cell, std::uint64_t seed) {
  spec.validate();
  if (n_per_cell == 0) throw Error("invalid_argument", "n_per_cell must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  const std::size_t total = spec.num_classes * spec.num_domains * n_per_cell;
  Dataset ds{Matrix(total, spec.feature_dim), {}, {}};
  ds.class_ids.reserve(total);
  ds.domain_ids.reserve(total);
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t d = 0; d < spec.num_domains; ++d) {
      const auto mean = cell_mean(spec, c, d);
      for (std::size_t s = 0; s < n_per_cell; ++s, ++row) {
        auto x = ds.features.row(row);
        for (std::size_t k = 0; k < spec.feature_dim; ++k) x[k] = mean[k] + noise(rng);
        ds.class_ids.push_back(static_cast<int>(c));
        ds.domain_ids.push_back(static_cast<int>(d));
      }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Wasserstein distances.

/// Exact W_p between two empirical 1-D distributions with uniform weights,
/// by integrating |Q_a(u) - Q_b(u)|^p over the merged breakpoints of the two
/// step quantile functions. Equal sizes reduce to the sorted-sample coupling.
inline double wasserstein_1d(std::span<const double> samples_a, std::span<const double> samples_b,
                             double p) {
  if (samples_a.empty() || samples_b.empty()) {
    throw Error("empty_input", "wasserstein_1d needs non-empty sample sets");
  }
  if (!(p >= 1.0) || !std::isfinite(p)) throw Error("invalid_argument", "moment p must be >= 1");
  std::vector<double> a(samples_a.begin(), samples_a.end());
  std::vector<double> b(samples_b.begin(), samples_b.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto n = static_cast<std::uint64_t>(a.size());
  const auto m = static_cast<std::uint64_t>(b.size());

  auto cost = [p](double x, double y) {
    const double d = std::abs(x - y);
    if (p == 1.0) return d;
    if (p == 2.0) return d * d;
    return std::pow(d, p);
  };

  // Positions on [0, 1] measured in units of 1/(n*m).
  double acc = 0.0;
  std::uint64_t i = 0;
  std::uint64_t j = 0;
  std::uint64_t pos = 0;
  const double unit = 1.0 / (static_cast<double>(n) * static_cast<double>(m));
  while (i < n && j < m) {
    const std::uint64_t next_a = (i + 1) * m;
    const std::uint64_t next_b = (j + 1) * n;
    const std::uint64_t next = std::min(next_a, next_b);
    acc += static_cast<double>(next - pos) * unit * cost(a[i], b[j]);
    pos = next;
    if (next_a == next) ++i;
    if (next_b == next) ++j;
  }
  if (p == 1.0) return acc;
  if (p == 2.0) return std::sqrt(acc);
  return std::pow(acc, 1.0 / p);
}

enum class LabelKind { class_label, domain_label };

/// Mean over label pairs of the mean over dimensions of the 1-D W_p between
/// the per-label marginals (a sliced proxy for the multivariate distance).
inline double conditional_distance(const Dataset& ds, LabelKind kind, double p = 2.0) {
  ds.validate();
  const auto& labels = kind == LabelKind::class_label ? ds.class_ids : ds.domain_ids;
  const std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) {
    throw Error("too_few_labels", "conditional_distance needs at least 2 distinct labels");
  }
  const std::vector<int> keys(distinct.begin(), distinct.end());
  const std::size_t dim = ds.dim();
  // columns[label][dim] -> samples
  std::vector<std::vector<std::vector<double>>> columns(keys.size(),
                                                        std::vector<std::vector<double>>(dim));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto li = static_cast<std::size_t>(
        std::lower_bound(keys.begin(), keys.end(), labels[i]) - keys.begin());
    const auto row = ds.features.row(i);
    for (std::size_t k = 0; k < dim; ++k) columns[li][k].push_back(row[k]);
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t u = 0; u < keys.size(); ++u) {
    for (std::size_t v = u + 1; v < keys.size(); ++v) {
      double per_dim = 0.0;
      for (std::size_t k = 0; k < dim; ++k) per_dim += wasserstein_1d(columns[u][k], columns[v][k], p);
      total += per_dim / static_cast<double>(dim);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

struct DominanceReport {
  double d_domain = 0.0;  // d_A
  double d_class = 0.0;   // d_B
  double ratio = 0.0;     // d_A / d_B
  double moment = 2.0;
};

/// Sliced-W2 proxy for domain dominance: ratio of the mean pairwise distance
/// between domain-conditionals to that between class-conditionals.
inline DominanceReport dominance_report(const Dataset& ds, double p = 2.0) {
  DominanceReport r;
  r.moment = p;
  r.d_domain = conditional_distance(ds, LabelKind::domain_label, p);
  r.d_class = conditional_distance(ds, LabelKind::class_label, p);
  r.ratio = r.d_class > 0.0 ? r.d_domain / r.d_class : std::numeric_limits<double>::infinity();
  return r;
}

}  // namespace dct
