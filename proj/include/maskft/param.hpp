#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "maskft/net.hpp"
#include "maskft/tensor.hpp"

namespace maskft {

/// Learnable residual stored as (sorted index set, values) over the global
/// parameter index space. Storage is exactly one value per index; there is
/// no dense shadow.
struct SparseDelta {
  std::vector<std::size_t> indices;
  std::vector<double> values;

  std::size_t value_count() const { return values.size(); }
  void validate(std::size_t param_count) const;  // sorted, in range, aligned

  static SparseDelta zeros(std::vector<std::size_t> indices);
};

/// Low-rank residual: one (A: m x r, B: r x n) pair per weight matrix, a
/// dense residual for biases, and optional factors for the prototype matrix.
struct LoraDelta {
  std::vector<Matrix> a;  // per weight matrix, m x r
  std::vector<Matrix> b;  // per weight matrix, r x n
  Matrix proto_a, proto_b;  // empty unless prototypes are included
  std::vector<Matrix> bias_residual;  // 1 x dim per layer; zero when untrained
  double alpha = 1.0;
  std::size_t rank = 1;
  bool include_prototypes = false;
  bool train_bias = false;

  std::size_t factor_value_count() const;
};

enum class Method { Full, LinearProbe, Lora, RandomMask, Mixout, Gmixout };

/// Method selector plus the hyperparameters that define it.
struct MethodKind {
  Method method = Method::Full;
  double mask_prob = 0.0;      // p, for mask-based methods
  double ema_coeff = 0.5;      // lambda, gmixout
  std::uint64_t episodes = 0;  // I; k is derived as floor(T / I) when set
  std::uint64_t episode_len = 0;  // k; takes precedence over episodes when set
  std::size_t rank = 1;        // r, lora
  double lora_alpha = 0.0;     // 0 -> 1/r

  static MethodKind full() { return {}; }
  static MethodKind linear_probe();
  static MethodKind lora(std::size_t rank, double alpha = 0.0);
  static MethodKind random_mask(double p);
  static MethodKind mixout(double p);
  static MethodKind gmixout(double p, double lambda, std::uint64_t episodes);

  void validate() const;
  std::string name() const;
};

/// (1 - p)^-1, the factor that keeps the expected masked update equal to the
/// dense residual. Only mixout/gmixout apply it; random masking uses 1.
double mask_rescale(double mask_prob);

/// anchor + rescale * scatter(delta); untouched coordinates bit-equal to the
/// anchor. Throws std::out_of_range for indices outside the anchor's space.
ParamSet effective_params(const ParamSet& anchor, const SparseDelta& delta, double rescale);

/// Dense residual implied by the factors: alpha * A * B per weight matrix,
/// the stored dense bias residuals, and alpha * Ap * Bp for prototypes when
/// included (zero otherwise). Returned as a ParamSet of residuals.
ParamSet lora_materialize(const LoraDelta& lora, const ParamSet& anchor);

ParamSet merge_for_inference(const ParamSet& anchor, const SparseDelta& delta, double rescale);
ParamSet merge_for_inference(const ParamSet& anchor, const LoraDelta& lora);

/// Gradient w.r.t. the sparse values: rescale * dense gradient gathered at
/// the index set (chain rule through the scatter).
std::vector<double> sparse_grad_project(const ParamSet& dense_grad,
                                        const std::vector<std::size_t>& indices, double rescale);

/// Gather anchor-space values at the given indices.
std::vector<double> gather(const ParamSet& params, const std::vector<std::size_t>& indices);

/// Global indices eligible for masking: every weight matrix entry, plus the
/// prototype matrix when include_prototypes is set. Biases are never masked.
std::vector<std::size_t> maskable_indices(const ParamSet& params, bool include_prototypes);

/// All indices [0, size).
std::vector<std::size_t> all_indices(const ParamSet& params);

/// Fresh LoRA residual: A = 0, B ~ N(0, 1/r) so the initial residual is zero.
/// alpha = 0 selects the 1/r default.
LoraDelta init_lora(const ParamSet& anchor, std::size_t rank, double alpha, bool include_prototypes,
                    bool train_bias, Rng& rng);

}  // namespace maskft
