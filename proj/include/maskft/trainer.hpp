#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "maskft/data.hpp"
#include "maskft/net.hpp"
#include "maskft/param.hpp"

namespace maskft {

enum class AnchorUpdate {
  Integrate,  // anchor <- anchor + (1-lambda) * rescaled residual
  Literal,    // anchor <- lambda * anchor + (1-lambda) * rescaled residual
};

struct FinetuneConfig {
  MethodKind method;
  std::uint64_t iterations = 0;  // T
  double lr = 1e-2;
  double weight_decay = 0.0;
  std::size_t batch_size = 16;
  double warmup_fraction = 0.0;
  std::uint64_t seed = 0;
  LossKind loss;
  AnchorUpdate anchor_update = AnchorUpdate::Integrate;
  bool mask_prototypes = true;      // whether the prototype matrix is maskable
  double moving_average = 0.0;      // >0: evaluate at an EMA of the iterates
  bool gmixout_reset_moments = true;
  bool lora_train_bias = false;
  bool lora_include_prototypes = false;

  void validate() const;
  /// Episode length k: explicit episode_len, else floor(T / episodes).
  std::uint64_t episode_length() const;
};

struct AdamMoments {
  std::vector<double> m, v;
  std::uint64_t step = 0;
  void reset(std::size_t n);
};

/// Decoupled-weight-decay Adam with bias correction. values/grads/moments
/// must be aligned.
void adamw_step(std::span<double> values, std::span<const double> grads, AdamMoments& moments,
                double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

/// Linear ramp 0 -> peak over the warmup steps, then cosine decay to 0 at T.
double lr_at(std::uint64_t iter, std::uint64_t total, double peak, double warmup_fraction);

struct TrajectoryLog {
  struct Row {
    std::uint64_t iter;
    std::uint64_t episode;
    double loss;
    double lr;
    std::size_t nnz;  // active trainable values this step
  };
  std::vector<Row> rows;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> anchor_checksums;  // (episode, fnv64)
  std::string header_note;

  void to_csv(const std::string& path) const;
};

/// Resumable training trajectory for one run.
struct TrainState {
  ParamSet anchor;
  FinetuneConfig config;
  double rescale = 1.0;
  SparseDelta delta;       // main residual (dense for full/mixout, sparse for masked methods)
  SparseDelta bias_delta;  // dense bias residual for mask methods; empty otherwise
  LoraDelta lora;
  AdamMoments moments;
  std::uint64_t iter = 0;
  std::uint64_t episode = 0;
  std::uint64_t episode_len = 0;  // 0 = no episodes
  Rng mask_rng{0}, order_rng{0};
  std::vector<std::size_t> maskable;          // cached maskable index set
  std::vector<std::size_t> current_mask_pos;  // mixout: positions into maskable

  std::size_t trainable_count() const;
};

struct CostCounters {
  std::string method;
  std::size_t trainable_total = 0;
  std::size_t trainable_masked = 0;      // |S| for masked methods, factors for lora
  std::size_t trainable_dense_bias = 0;  // dense bias residual values
  std::size_t resident_delta_values = 0;
  std::size_t resident_bias_values = 0;
  std::size_t resident_moment_values = 0;
  double wall_ms_per_step = 0.0;
};

struct TrainResult {
  ParamSet final_params;  // merged, ready for inference
  ParamSet final_anchor;
  TrajectoryLog log;
  CostCounters cost;
};

/// Raised when the training loss goes non-finite.
class TrainAbort : public std::runtime_error {
 public:
  TrainAbort(std::uint64_t iter, double lr, double grad_norm);
  std::uint64_t iter;
  double lr;
  double grad_norm;
};

TrainState init_train_state(const ParamSet& anchor, const FinetuneConfig& config);

/// Effective weights the loss sees at the current state (anchor + active
/// rescaled residual).
ParamSet state_effective_params(const TrainState& state);

/// EMA-merge the outstanding residual into the anchor, reset the residual,
/// resample the mask, and reset moments. Gmixout only.
void run_episode_boundary(TrainState& state);

/// Full training loop. Deterministic given config; the final ParamSet is the
/// inference merge of the last state (for gmixout, after the terminal episode
/// boundary). Throws TrainAbort on non-finite loss.
TrainResult train(const ParamSet& anchor, const FinetuneConfig& config, const Split& data);

/// FNV-1a over the bytes of all parameters in global order.
std::uint64_t param_checksum(const ParamSet& params);

}  // namespace maskft
