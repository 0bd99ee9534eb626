#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "maskft/tensor.hpp"

namespace maskft {

enum class Activation { Tanh, Relu };

/// Architecture of the feature extractor plus prototypical head.
/// Layers: input -> hidden[0] -> ... -> hidden[n-1] -> feature_dim (linear),
/// hidden layers activated, the feature projection is not. Logits are cosine
/// similarities between l2-normalized features and class prototypes, divided
/// by the temperature.
struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t feature_dim = 0;
  std::size_t class_count = 0;
  Activation activation = Activation::Tanh;
  double temperature = 0.07;

  void validate() const;  // throws std::invalid_argument on bad dims
  std::size_t layer_count() const { return hidden_dims.size() + 1; }
};

/// All model parameters: one weight matrix + bias row per layer, plus the
/// prototype matrix (class_count x feature_dim). Scalars are addressable
/// through a single global index space in block order
/// (w0, b0, w1, b1, ..., prototypes).
struct ParamSet {
  NetworkSpec spec;
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;  // 1 x dim rows
  Matrix prototypes;

  std::size_t size() const;
  double get(std::size_t index) const;
  void set(std::size_t index, double value);
  void add(std::size_t index, double value);

  /// Global index ranges, in flattening order.
  struct BlockRange {
    std::string name;
    std::size_t offset;
    std::size_t count;
  };
  std::vector<BlockRange> layout() const;

  /// Index ranges of the prototype block / of all bias blocks.
  std::pair<std::size_t, std::size_t> prototype_range() const;  // [first, last)
  std::vector<std::size_t> bias_indices() const;

  bool same_shape(const ParamSet& other) const;
};

/// Fresh parameter set with gaussian weights (std 1/sqrt(fan_in)) and zero
/// biases; prototypes gaussian with std 1/sqrt(feature_dim).
ParamSet init_params(const NetworkSpec& spec, Rng& rng);

enum class LossType { CrossEntropy, LogitAdjusted };

struct LossKind {
  LossType type = LossType::CrossEntropy;
  std::vector<double> priors;  // class priors, required for LogitAdjusted

  static LossKind cross_entropy() { return {}; }
  static LossKind logit_adjusted(std::vector<double> priors);
  void validate(std::size_t class_count) const;
};

/// Cosine-similarity head. features: batch x k, prototypes: C x k.
/// Rows are normalized by (norm + 1e-12); zero rows stay zero instead of
/// erroring.
Matrix head_logits(const Matrix& features, const Matrix& prototypes, double temperature);

/// Full forward pass, batch x C logits.
Matrix forward(const ParamSet& params, const Matrix& x);

/// Features only (batch x k), before normalization.
Matrix features(const ParamSet& params, const Matrix& x);

/// Mean negative log-likelihood over the batch. The logit-adjusted variant
/// adds log(prior_c) to logit c before the softmax.
double loss(const Matrix& logits, const std::vector<int>& labels, const LossKind& kind);

/// Gradient of loss(forward(params, x), labels) w.r.t. every parameter.
ParamSet backward(const ParamSet& params, const Matrix& x, const std::vector<int>& labels,
                  const LossKind& kind);

/// Forward + loss in one pass (shares the workspace with backward callers).
double forward_loss(const ParamSet& params, const Matrix& x, const std::vector<int>& labels,
                    const LossKind& kind);

/// Prototypes as per-class mean features of the probe set. Classes absent
/// from the probe keep a zero prototype.
Matrix prototypes_from_class_means(const ParamSet& params, const Matrix& probe_x,
                                   const std::vector<int>& probe_y, std::size_t class_count);

}  // namespace maskft
