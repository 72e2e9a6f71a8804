#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "dct/batch_norm.hpp"
#include "dct/feature_norm.hpp"
#include "dct/matrix.hpp"
#include "dct/mining.hpp"
#include "dct/model.hpp"

namespace dct {

/// Which tensor feeds the linear classifier: the raw encoder output or the
/// batch-normalized one. Without BN both resolve to the encoder output.
enum class ClassifierInput { before_bn, after_bn };

inline std::string to_string(ClassifierInput c) {
  return c == ClassifierInput::before_bn ? "before" : "after";
}

struct LossConfig {
  double margin = 0.5;
  MiningPolicy policy = MiningPolicy::domain_class;
  Selection selection = Selection::batch_hard;
  bool use_bn = true;
  bool use_fn = false;
  ClassifierInput classifier_input = ClassifierInput::after_bn;
  double dct_weight = 1.0;

  void validate() const {
    if (!std::isfinite(margin) || margin < 0.0) throw Error("invalid_config", "margin must be finite and >= 0");
    if (!std::isfinite(dct_weight) || dct_weight < 0.0) {
      throw Error("invalid_config", "dct_weight must be finite and >= 0");
    }
  }
};

/// Floor applied to squared distances before the square root.
inline constexpr double kMinSquaredDistance = 1e-12;

inline double triplet_hinge(double d_ap, double d_an, double margin) {
  return std::max(0.0, d_ap - d_an + margin);
}

struct DctStats {
  std::size_t valid_triplets = 0;
  std::size_t active_triplets = 0;
  double active_fraction = 0.0;
  double mean_d_ap = 0.0;
  double mean_d_an = 0.0;
  bool no_valid_triplets = true;
};

struct DctLoss {
  double loss = 0.0;
  Matrix embedding_grad;
  DctStats stats;
};

/// Mean hinge over valid triplets (valid anchors under batch-hard) with the
/// exact subgradient w.r.t. the embeddings. Inactive hinges, including the
/// kink itself, contribute zero gradient.
inline DctLoss dct_loss(const Matrix& embeddings, std::span<const int> class_labels,
                        std::span<const int> domain_labels, const LossConfig& cfg) {
  cfg.validate();
  const std::size_t n = embeddings.rows();
  if (class_labels.size() != n || domain_labels.size() != n) {
    throw Error("shape_mismatch", "label count != embedding rows");
  }
  DctLoss out{0.0, Matrix(n, embeddings.cols()), {}};
  const auto masks = candidate_masks(class_labels, domain_labels, cfg.policy);
  const Matrix sq = pairwise_sq_distances(embeddings);
  const TripletSet set = cfg.selection == Selection::batch_hard ? batch_hard_select(sq, masks)
                                                                : batch_all_expand(masks);
  const std::size_t valid = set.valid_count();
  out.stats.valid_triplets = valid;
  if (valid == 0) return out;
  out.stats.no_valid_triplets = false;

  auto distance = [&sq](std::size_t i, std::size_t j) {
    return std::sqrt(std::max(sq(i, j), kMinSquaredDistance));
  };
  const double inv_valid = 1.0 / static_cast<double>(valid);
  const std::size_t dim = embeddings.cols();

  // d‖x_i − x_j‖/dx_i, zero inside the clamp floor
  auto accumulate = [&](std::size_t i, std::size_t j, double d, double coeff) {
    if (sq(i, j) <= kMinSquaredDistance) return;
    const auto xi = embeddings.row(i);
    const auto xj = embeddings.row(j);
    auto gi = out.embedding_grad.row(i);
    auto gj = out.embedding_grad.row(j);
    for (std::size_t k = 0; k < dim; ++k) {
      const double u = coeff * (xi[k] - xj[k]) / d;
      gi[k] += u;
      gj[k] -= u;
    }
  };

  for (const auto& t : set.triplets) {
    if (!t.valid) continue;
    const double d_ap = distance(t.anchor, t.positive);
    const double d_an = distance(t.anchor, t.negative);
    out.stats.mean_d_ap += d_ap * inv_valid;
    out.stats.mean_d_an += d_an * inv_valid;
    const double h = triplet_hinge(d_ap, d_an, cfg.margin);
    if (!(h > 0.0)) continue;
    ++out.stats.active_triplets;
    out.loss += h * inv_valid;
    accumulate(t.anchor, t.positive, d_ap, inv_valid);
    accumulate(t.anchor, t.negative, d_an, -inv_valid);
  }
  out.stats.active_fraction =
      static_cast<double>(out.stats.active_triplets) / static_cast<double>(valid);
  return out;
}

// ---------------------------------------------------------------------------
// Full network: encoder -> [BN] -> [FN] -> triplet features, classifier on
// the encoder output or the BN output.

struct NetworkForward {
  MlpForward encoder;
  std::optional<BatchNormForward> bn;
  std::optional<FeatureNormForward> fn;
  Matrix triplet_features;
  Matrix classifier_input;
  Matrix logits;
};

inline NetworkForward network_forward(ModelParams& params, const Matrix& batch,
                                      const LossConfig& cfg, bool train_mode) {
  NetworkForward fwd;
  fwd.encoder = mlp_forward(params, batch, train_mode);
  const Matrix* after_bn = &fwd.encoder.embeddings;
  if (cfg.use_bn) {
    fwd.bn = nobias_bn_forward(params.bn, fwd.encoder.embeddings, train_mode);
    after_bn = &fwd.bn->output;
  }
  if (cfg.use_fn) {
    fwd.fn = feature_normalize_forward(*after_bn);
    fwd.triplet_features = fwd.fn->output;
  } else {
    fwd.triplet_features = *after_bn;
  }
  fwd.classifier_input =
      cfg.classifier_input == ClassifierInput::after_bn ? *after_bn : fwd.encoder.embeddings;
  fwd.logits = linear_forward(fwd.classifier_input, params.classifier_weight, params.classifier_bias);
  return fwd;
}

struct TotalLoss {
  double total = 0.0;
  double ce = 0.0;
  double dct = 0.0;
  DctStats stats;
  ParamGrads grads;
  Matrix logits;
  Matrix triplet_features;
};

/// CE(classifier) + dct_weight * DCT(triplet features), with one backward pass
/// that merges both gradient paths at BN and at the encoder output. In train
/// mode BN running statistics of `params` are updated.
inline TotalLoss total_loss(ModelParams& params, const Matrix& batch,
                            std::span<const int> class_labels, std::span<const int> domain_labels,
                            const LossConfig& cfg, bool train_mode = true) {
  cfg.validate();
  params.validate();
  if (class_labels.size() != batch.rows() || domain_labels.size() != batch.rows()) {
    throw Error("shape_mismatch", "label count != batch rows");
  }
  auto fwd = network_forward(params, batch, cfg, train_mode);

  TotalLoss out;
  out.grads = ParamGrads::zeros_like(params);
  const auto ce = softmax_cross_entropy(fwd.logits, class_labels);
  out.ce = ce.loss;

  const std::size_t n = batch.rows();
  const std::size_t emb = params.embedding_dim();
  Matrix grad_encoder_out(n, emb);
  Matrix grad_after_bn(n, emb);

  auto head = linear_backward(fwd.classifier_input, params.classifier_weight, ce.logits_grad);
  out.grads.classifier_weight = std::move(head.weight_grad);
  out.grads.classifier_bias = std::move(head.bias_grad);
  if (cfg.classifier_input == ClassifierInput::after_bn && cfg.use_bn) {
    grad_after_bn += head.input_grad;
  } else {
    grad_encoder_out += head.input_grad;
  }

  if (cfg.dct_weight > 0.0) {
    auto dct = dct_loss(fwd.triplet_features, class_labels, domain_labels, cfg);
    out.dct = dct.loss;
    out.stats = dct.stats;
    dct.embedding_grad *= cfg.dct_weight;
    if (cfg.use_fn) {
      grad_after_bn += feature_normalize_backward(fwd.fn->cache, dct.embedding_grad);
    } else {
      grad_after_bn += dct.embedding_grad;
    }
  }

  if (cfg.use_bn) {
    auto bn = nobias_bn_backward(fwd.bn->cache, grad_after_bn);
    out.grads.gamma = std::move(bn.gamma_grad);
    grad_encoder_out += bn.input_grad;
  } else {
    grad_encoder_out += grad_after_bn;
  }

  auto enc = backward(fwd.encoder.tape, grad_encoder_out);
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    out.grads.encoder[l] = std::move(enc.layers[l]);
  }
  out.total = out.ce + cfg.dct_weight * out.dct;
  out.logits = std::move(fwd.logits);
  out.triplet_features = std::move(fwd.triplet_features);
  return out;
}

}  // namespace dct
