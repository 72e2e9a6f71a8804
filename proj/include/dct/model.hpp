#pragma once

// Minimal forward/backward engine for an MLP encoder, a no-bias BN neck and a
// linear classifier head, trained with SGD + momentum.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dct/batch_norm.hpp"
#include "dct/matrix.hpp"

namespace dct {

enum class Activation { identity, relu };

struct LinearLayer {
  Matrix weight;  // in x out
  std::vector<double> bias;
  Activation activation = Activation::identity;

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }

  friend bool operator==(const LinearLayer&, const LinearLayer&) = default;
};

struct ModelParams {
  std::vector<LinearLayer> encoder;
  BatchNormState bn;  // gamma is learned; running stats are owned alongside
  Matrix classifier_weight;  // embedding_dim x num_classes
  std::vector<double> classifier_bias;

  std::size_t input_dim() const { return encoder.empty() ? 0 : encoder.front().in_dim(); }
  std::size_t embedding_dim() const { return encoder.empty() ? 0 : encoder.back().out_dim(); }
  std::size_t num_classes() const noexcept { return classifier_weight.cols(); }

  void validate() const {
    if (encoder.empty()) throw Error("invalid_model", "encoder has no layers");
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      const auto& layer = encoder[l];
      if (layer.bias.size() != layer.out_dim()) {
        throw Error("invalid_model", "layer " + std::to_string(l) + ": bias length mismatch");
      }
      if (l > 0 && encoder[l - 1].out_dim() != layer.in_dim()) {
        throw Error("invalid_model", "layer " + std::to_string(l) + ": input dim " +
                                         std::to_string(layer.in_dim()) + " != previous output " +
                                         std::to_string(encoder[l - 1].out_dim()));
      }
    }
    if (bn.dim() != embedding_dim()) throw Error("invalid_model", "gamma length != embedding dim");
    bn.validate();
    if (classifier_weight.rows() != embedding_dim() ||
        classifier_bias.size() != classifier_weight.cols()) {
      throw Error("invalid_model", "classifier shape does not match embedding dim");
    }
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct LayerGrad {
  Matrix weight;
  std::vector<double> bias;
};

/// Gradient container mirroring ModelParams (running stats have no gradient).
struct ParamGrads {
  std::vector<LayerGrad> encoder;
  std::vector<double> gamma;
  Matrix classifier_weight;
  std::vector<double> classifier_bias;

  static ParamGrads zeros_like(const ModelParams& p) {
    ParamGrads g;
    for (const auto& layer : p.encoder) {
      g.encoder.push_back({Matrix(layer.in_dim(), layer.out_dim()),
                           std::vector<double>(layer.out_dim(), 0.0)});
    }
    g.gamma.assign(p.bn.dim(), 0.0);
    g.classifier_weight = Matrix(p.classifier_weight.rows(), p.classifier_weight.cols());
    g.classifier_bias.assign(p.classifier_bias.size(), 0.0);
    return g;
  }
};

/// Every trainable tensor of the model as a flat span, in a fixed order:
/// encoder (W, b) per layer, gamma, classifier W, classifier b.
inline std::vector<std::span<double>> parameter_spans(ModelParams& p) {
  std::vector<std::span<double>> out;
  for (auto& layer : p.encoder) {
    out.emplace_back(layer.weight.data());
    out.emplace_back(layer.bias);
  }
  out.emplace_back(p.bn.gamma);
  out.emplace_back(p.classifier_weight.data());
  out.emplace_back(p.classifier_bias);
  return out;
}

inline std::vector<std::span<double>> gradient_spans(ParamGrads& g) {
  std::vector<std::span<double>> out;
  for (auto& layer : g.encoder) {
    out.emplace_back(layer.weight.data());
    out.emplace_back(layer.bias);
  }
  out.emplace_back(g.gamma);
  out.emplace_back(g.classifier_weight.data());
  out.emplace_back(g.classifier_bias);
  return out;
}

inline std::vector<std::span<const double>> gradient_spans(const ParamGrads& g) {
  std::vector<std::span<const double>> out;
  for (const auto& layer : g.encoder) {
    out.emplace_back(layer.weight.data());
    out.emplace_back(layer.bias);
  }
  out.emplace_back(g.gamma);
  out.emplace_back(g.classifier_weight.data());
  out.emplace_back(g.classifier_bias);
  return out;
}

/// Uniform init in [-sqrt(1/fan_in), sqrt(1/fan_in)] for weights and biases;
/// gamma = 1, running mean 0, running var 1. Hidden layers use ReLU, the last
/// encoder layer is linear.
inline ModelParams init_model(std::span<const std::size_t> layer_sizes, std::size_t num_classes,
                              std::mt19937_64& rng) {
  if (layer_sizes.size() < 2) throw Error("invalid_model", "need at least input and output sizes");
  if (num_classes < 2) throw Error("invalid_model", "need at least 2 classes");
  auto fill = [&rng](std::span<double> values, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : values) v = dist(rng);
  };
  ModelParams p;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    LinearLayer layer{Matrix(layer_sizes[l], layer_sizes[l + 1]),
                      std::vector<double>(layer_sizes[l + 1]),
                      l + 2 < layer_sizes.size() ? Activation::relu : Activation::identity};
    fill(layer.weight.data(), layer_sizes[l]);
    fill(layer.bias, layer_sizes[l]);
    p.encoder.push_back(std::move(layer));
  }
  const std::size_t emb = layer_sizes.back();
  p.bn = BatchNormState(emb);
  p.classifier_weight = Matrix(emb, num_classes);
  p.classifier_bias.assign(num_classes, 0.0);
  fill(p.classifier_weight.data(), emb);
  fill(p.classifier_bias, emb);
  return p;
}

// ---------------------------------------------------------------------------
// Linear algebra building blocks.

inline Matrix linear_forward(const Matrix& x, const Matrix& weight, std::span<const double> bias) {
  Matrix out = matmul(x, weight);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
  return out;
}

struct LinearBackward {
  Matrix input_grad;
  Matrix weight_grad;
  std::vector<double> bias_grad;
};

inline LinearBackward linear_backward(const Matrix& input, const Matrix& weight,
                                      const Matrix& upstream) {
  LinearBackward out{matmul_nt(upstream, weight), matmul_tn(input, upstream),
                     std::vector<double>(upstream.cols(), 0.0)};
  for (std::size_t i = 0; i < upstream.rows(); ++i) {
    for (std::size_t j = 0; j < upstream.cols(); ++j) out.bias_grad[j] += upstream(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoder forward / backward.

struct TapeEntry {
  std::size_t layer = 0;
  Activation activation = Activation::identity;
  Matrix input;
  Matrix preactivation;
  Matrix weight;
};

/// Records, in forward order, what each encoder layer needs for backward.
struct GradTape {
  std::vector<TapeEntry> entries;
  std::size_t output_rows = 0;
  std::size_t output_cols = 0;
  bool train_mode = false;
};

struct MlpForward {
  Matrix embeddings;
  GradTape tape;
};

inline MlpForward mlp_forward(const ModelParams& params, const Matrix& batch, bool train_mode) {
  MlpForward fwd;
  fwd.tape.train_mode = train_mode;
  Matrix current = batch;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const auto& layer = params.encoder[l];
    if (current.cols() != layer.in_dim() || layer.bias.size() != layer.out_dim()) {
      throw Error("shape_mismatch", "layer " + std::to_string(l) + ": expects input dim " +
                                        std::to_string(layer.in_dim()) + ", got " +
                                        std::to_string(current.cols()));
    }
    Matrix pre = linear_forward(current, layer.weight, layer.bias);
    Matrix post = pre;
    if (layer.activation == Activation::relu) {
      for (double& v : post.data()) v = v > 0.0 ? v : 0.0;
    }
    fwd.tape.entries.push_back({l, layer.activation, std::move(current), std::move(pre), layer.weight});
    current = std::move(post);
  }
  fwd.tape.output_rows = current.rows();
  fwd.tape.output_cols = current.cols();
  fwd.embeddings = std::move(current);
  return fwd;
}

struct MlpBackward {
  std::vector<LayerGrad> layers;  // indexed like ModelParams::encoder
  Matrix input_grad;
};

/// Walks the tape once, last entry first.
inline MlpBackward backward(const GradTape& tape, const Matrix& upstream) {
  if (upstream.rows() != tape.output_rows || upstream.cols() != tape.output_cols) {
    throw Error("shape_mismatch", "backward: upstream " + upstream.shape_string() +
                                      " does not match embeddings " +
                                      std::to_string(tape.output_rows) + "x" +
                                      std::to_string(tape.output_cols));
  }
  MlpBackward out;
  out.layers.resize(tape.entries.size());
  Matrix grad = upstream;
  for (auto it = tape.entries.rbegin(); it != tape.entries.rend(); ++it) {
    if (it->activation == Activation::relu) {
      for (std::size_t k = 0; k < grad.size(); ++k) {
        if (!(it->preactivation.data()[k] > 0.0)) grad.data()[k] = 0.0;
      }
    }
    auto lin = linear_backward(it->input, it->weight, grad);
    out.layers[it->layer] = {std::move(lin.weight_grad), std::move(lin.bias_grad)};
    grad = std::move(lin.input_grad);
  }
  out.input_grad = std::move(grad);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer.

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// Velocity buffers for SGD with momentum; owned by the trainer.
struct SgdState {
  std::vector<std::vector<double>> velocity;
};

/// v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v.
/// lr = 0 is accepted and leaves the weights untouched. Non-finite gradients
/// refuse the whole step before any parameter is modified.
inline void sgd_step(ModelParams& params, const ParamGrads& grads, SgdState& state,
                     const SgdConfig& cfg) {
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw Error("invalid_optimizer", "lr must be >= 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw Error("invalid_optimizer", "momentum must lie in [0, 1)");
  }
  if (!(cfg.weight_decay >= 0.0)) throw Error("invalid_optimizer", "weight_decay must be >= 0");

  auto ps = parameter_spans(params);
  const auto gs = gradient_spans(grads);
  if (ps.size() != gs.size()) throw Error("shape_mismatch", "gradient layout does not match model");
  for (std::size_t t = 0; t < ps.size(); ++t) {
    if (ps[t].size() != gs[t].size()) {
      throw Error("shape_mismatch", "gradient tensor " + std::to_string(t) + " has wrong size");
    }
    for (double g : gs[t]) {
      if (!std::isfinite(g)) {
        throw Error("non_finite_gradient", "gradient tensor " + std::to_string(t) +
                                               " contains a non-finite entry");
      }
    }
  }
  if (state.velocity.empty()) {
    for (const auto& p : ps) state.velocity.emplace_back(p.size(), 0.0);
  }
  for (std::size_t t = 0; t < ps.size(); ++t) {
    auto& vel = state.velocity[t];
    for (std::size_t k = 0; k < ps[t].size(); ++k) {
      const double g = gs[t][k] + cfg.weight_decay * ps[t][k];
      vel[k] = cfg.momentum * vel[k] + g;
      ps[t][k] -= cfg.lr * vel[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Distances and classification loss.

/// Squared Euclidean distances between all row pairs. Symmetric with an exact
/// zero diagonal; negative round-off is clamped to 0.
inline Matrix pairwise_sq_distances(const Matrix& embeddings) {
  const std::size_t n = embeddings.rows();
  Matrix dist(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = embeddings.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto xj = embeddings.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < xi.size(); ++k) {
        const double d = xi[k] - xj[k];
        acc += d * d;
      }
      acc = std::max(acc, 0.0);
      dist(i, j) = acc;
      dist(j, i) = acc;
    }
  }
  return dist;
}

struct CrossEntropy {
  double loss = 0.0;
  Matrix logits_grad;
};

/// Mean softmax cross-entropy over the batch; gradient is (softmax - onehot)/N.
inline CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  if (labels.size() != n) throw Error("shape_mismatch", "label count != logits rows");
  if (n == 0) throw Error("shape_mismatch", "empty batch");
  CrossEntropy ce{0.0, Matrix(n, c)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw Error("label_out_of_range", "label " + std::to_string(y) + " at row " +
                                            std::to_string(i) + " not in [0, " +
                                            std::to_string(c) + ")");
    }
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    ce.loss += (lse - row[static_cast<std::size_t>(y)]) * inv_n;
    auto g = ce.logits_grad.row(i);
    for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(row[j] - lse) * inv_n;
    g[static_cast<std::size_t>(y)] -= inv_n;
  }
  return ce;
}

}  // namespace dct
