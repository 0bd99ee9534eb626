#include "maskft/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace maskft {

namespace {
// One rng stream per purpose; mask sampling and batch order must never
// interleave or trajectory-equivalence across methods breaks.
constexpr std::uint64_t kStreamMask = 1;
constexpr std::uint64_t kStreamOrder = 2;
constexpr std::uint64_t kStreamLoraInit = 3;
}  // namespace

void FinetuneConfig::validate() const {
  method.validate();
  loss.validate(0);  // prior length is checked against the batch at use time
  if (!(lr > 0.0)) throw std::invalid_argument("FinetuneConfig: lr must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("FinetuneConfig: weight_decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("FinetuneConfig: batch_size must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
    throw std::invalid_argument("FinetuneConfig: warmup_fraction must be in [0,1]");
  if (!(moving_average >= 0.0 && moving_average < 1.0))
    throw std::invalid_argument("FinetuneConfig: moving_average must be in [0,1)");
  if (method.method == Method::Gmixout && iterations > 0 && episode_length() < 1)
    throw std::invalid_argument("FinetuneConfig: gmixout needs floor(T/I) >= 1");
}

std::uint64_t FinetuneConfig::episode_length() const {
  if (method.episode_len > 0) return method.episode_len;
  if (method.episodes == 0) return 0;
  return iterations / method.episodes;
}

void AdamMoments::reset(std::size_t n) {
  m.assign(n, 0.0);
  v.assign(n, 0.0);
  step = 0;
}

void adamw_step(std::span<double> values, std::span<const double> grads, AdamMoments& moments,
                double lr, double weight_decay, double beta1, double beta2, double eps) {
  if (values.size() != grads.size() || values.size() != moments.m.size())
    throw std::invalid_argument("adamw_step: misaligned shapes");
  ++moments.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(moments.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(moments.step));
  for (std::size_t i = 0; i < values.size(); ++i) {
    moments.m[i] = beta1 * moments.m[i] + (1.0 - beta1) * grads[i];
    moments.v[i] = beta2 * moments.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mhat = moments.m[i] / bc1;
    const double vhat = moments.v[i] / bc2;
    values[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * values[i]);
  }
}

double lr_at(std::uint64_t iter, std::uint64_t total, double peak, double warmup_fraction) {
  if (total == 0) return 0.0;
  if (iter >= total) return 0.0;
  const auto warmup = static_cast<std::uint64_t>(warmup_fraction * static_cast<double>(total));
  if (warmup > 0 && iter <= warmup)
    return peak * static_cast<double>(iter) / static_cast<double>(warmup);
  const double x =
      static_cast<double>(iter - warmup) / static_cast<double>(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

void TrajectoryLog::to_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("TrajectoryLog: cannot open " + path);
  if (!header_note.empty()) os << "# " << header_note << "\n";
  os << "iter,episode,loss,lr,nnz\n";
  char buf[160];
  for (const Row& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%llu,%.10g,%.10g,%zu\n",
                  static_cast<unsigned long long>(r.iter),
                  static_cast<unsigned long long>(r.episode), r.loss, r.lr, r.nnz);
    os << buf;
  }
}

std::size_t TrainState::trainable_count() const {
  if (config.method.method == Method::Lora) {
    std::size_t n = lora.factor_value_count();
    if (lora.train_bias)
      for (const Matrix& b : lora.bias_residual) n += b.size();
    return n;
  }
  return delta.value_count() + bias_delta.value_count();
}

TrainAbort::TrainAbort(std::uint64_t it, double lr_, double gn)
    : std::runtime_error("training aborted: non-finite loss at iteration " + std::to_string(it) +
                         " (lr=" + std::to_string(lr_) + ", grad_norm=" + std::to_string(gn) + ")"),
      iter(it),
      lr(lr_),
      grad_norm(gn) {}

std::uint64_t param_checksum(const ParamSet& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const Matrix& m) {
    for (double d : m.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    feed(params.weights[l]);
    feed(params.biases[l]);
  }
  feed(params.prototypes);
  return h;
}

namespace {

// Dense always-trainable coordinates for the mask methods: biases, plus the
// prototype matrix when it is excluded from masking.
std::vector<std::size_t> dense_trainable_indices(const ParamSet& anchor, bool mask_prototypes) {
  std::vector<std::size_t> idx = anchor.bias_indices();
  if (!mask_prototypes) {
    auto [first, last] = anchor.prototype_range();
    for (std::size_t i = first; i < last; ++i) idx.push_back(i);  // prototypes sort last
  }
  return idx;
}

std::vector<double> concat_values(const TrainState& s) {
  std::vector<double> v;
  v.reserve(s.delta.value_count() + s.bias_delta.value_count());
  v.insert(v.end(), s.delta.values.begin(), s.delta.values.end());
  v.insert(v.end(), s.bias_delta.values.begin(), s.bias_delta.values.end());
  return v;
}

void split_values(TrainState& s, const std::vector<double>& v) {
  std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(s.delta.value_count()),
            s.delta.values.begin());
  std::copy(v.begin() + static_cast<std::ptrdiff_t>(s.delta.value_count()), v.end(),
            s.bias_delta.values.begin());
}

void sample_gmixout_mask(TrainState& s) {
  const auto pos = bernoulli_indices(s.maskable.size(), 1.0 - s.config.method.mask_prob, s.mask_rng);
  std::vector<std::size_t> idx(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) idx[i] = s.maskable[pos[i]];
  s.delta = SparseDelta::zeros(std::move(idx));
}

}  // namespace

TrainState init_train_state(const ParamSet& anchor, const FinetuneConfig& config) {
  config.validate();
  TrainState s;
  s.anchor = anchor;
  s.config = config;
  s.mask_rng = Rng(config.seed, kStreamMask);
  s.order_rng = Rng(config.seed, kStreamOrder);
  const MethodKind& mk = config.method;

  switch (mk.method) {
    case Method::Full:
      s.delta = SparseDelta::zeros(all_indices(anchor));
      break;
    case Method::LinearProbe: {
      auto [first, last] = anchor.prototype_range();
      std::vector<std::size_t> idx(last - first);
      std::iota(idx.begin(), idx.end(), first);
      s.delta = SparseDelta::zeros(std::move(idx));
      break;
    }
    case Method::Lora: {
      Rng lora_rng(config.seed, kStreamLoraInit);
      s.lora = init_lora(anchor, mk.rank, mk.lora_alpha, config.lora_include_prototypes,
                         config.lora_train_bias, lora_rng);
      break;
    }
    case Method::RandomMask: {
      s.maskable = maskable_indices(anchor, config.mask_prototypes);
      const auto pos = bernoulli_indices(s.maskable.size(), 1.0 - mk.mask_prob, s.mask_rng);
      std::vector<std::size_t> idx(pos.size());
      for (std::size_t i = 0; i < pos.size(); ++i) idx[i] = s.maskable[pos[i]];
      s.delta = SparseDelta::zeros(std::move(idx));
      s.bias_delta = SparseDelta::zeros(dense_trainable_indices(anchor, config.mask_prototypes));
      break;
    }
    case Method::Mixout:
      s.maskable = maskable_indices(anchor, config.mask_prototypes);
      s.delta = SparseDelta::zeros(s.maskable);  // dense residual, never reset
      s.bias_delta = SparseDelta::zeros(dense_trainable_indices(anchor, config.mask_prototypes));
      s.rescale = mask_rescale(mk.mask_prob);
      break;
    case Method::Gmixout:
      s.maskable = maskable_indices(anchor, config.mask_prototypes);
      s.bias_delta = SparseDelta::zeros(dense_trainable_indices(anchor, config.mask_prototypes));
      s.rescale = mask_rescale(mk.mask_prob);
      s.episode_len = config.episode_length();
      sample_gmixout_mask(s);  // first mask; the iter-0 boundary resamples it
      break;
  }
  if (mk.method != Method::Lora) s.moments.reset(s.delta.value_count() + s.bias_delta.value_count());
  return s;
}

ParamSet state_effective_params(const TrainState& s) {
  if (s.config.method.method == Method::Lora)
    return merge_for_inference(s.anchor, s.lora);
  ParamSet out = s.anchor;
  if (s.config.method.method == Method::Mixout) {
    for (std::size_t pos : s.current_mask_pos)
      out.add(s.delta.indices[pos], s.rescale * s.delta.values[pos]);
  } else {
    for (std::size_t i = 0; i < s.delta.indices.size(); ++i)
      out.add(s.delta.indices[i], s.rescale * s.delta.values[i]);
  }
  for (std::size_t i = 0; i < s.bias_delta.indices.size(); ++i)
    out.add(s.bias_delta.indices[i], s.bias_delta.values[i]);
  return out;
}

void run_episode_boundary(TrainState& s) {
  const double lam = s.config.method.ema_coeff;
  if (s.config.anchor_update == AnchorUpdate::Literal) {
    for (std::size_t l = 0; l < s.anchor.weights.size(); ++l) {
      for (double& v : s.anchor.weights[l].data) v *= lam;
      for (double& v : s.anchor.biases[l].data) v *= lam;
    }
    for (double& v : s.anchor.prototypes.data) v *= lam;
  }
  const double w = 1.0 - lam;
  for (std::size_t i = 0; i < s.delta.indices.size(); ++i)
    s.anchor.add(s.delta.indices[i], w * s.rescale * s.delta.values[i]);
  for (std::size_t i = 0; i < s.bias_delta.indices.size(); ++i)
    s.anchor.add(s.bias_delta.indices[i], w * s.bias_delta.values[i]);

  sample_gmixout_mask(s);
  std::fill(s.bias_delta.values.begin(), s.bias_delta.values.end(), 0.0);
  if (s.config.gmixout_reset_moments) {
    s.moments.reset(s.delta.value_count() + s.bias_delta.value_count());
  } else if (s.moments.m.size() != s.delta.value_count() + s.bias_delta.value_count()) {
    // keeping stale moments is only possible while the trainable count is
    // stable (p = 0); otherwise alignment forces a reset
    s.moments.reset(s.delta.value_count() + s.bias_delta.value_count());
  }
  ++s.episode;
}

namespace {

class BatchIterator {
 public:
  BatchIterator(std::size_t n, std::size_t batch, Rng& rng) : n_(n), batch_(batch), rng_(rng) {
    perm_.resize(n);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    cursor_ = n_;  // forces a shuffle on first use
  }

  std::vector<std::size_t> next() {
    if (cursor_ >= n_) {
      shuffle(perm_, rng_);
      cursor_ = 0;
    }
    const std::size_t take = std::min(batch_, n_ - cursor_);
    std::vector<std::size_t> out(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 perm_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
    cursor_ += take;
    return out;
  }

 private:
  std::size_t n_, batch_, cursor_;
  Rng& rng_;
  std::vector<std::size_t> perm_;
};

Split take_batch(const Split& data, const std::vector<std::size_t>& rows) {
  Split b;
  b.x = Matrix(rows.size(), data.x.cols);
  b.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < data.x.cols; ++j) b.x(i, j) = data.x(rows[i], j);
    b.y[i] = data.y[rows[i]];
  }
  return b;
}

double grad_norm(const ParamSet& g) {
  double s = 0.0;
  auto acc = [&s](const Matrix& m) {
    for (double v : m.data) s += v * v;
  };
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    acc(g.weights[l]);
    acc(g.biases[l]);
  }
  acc(g.prototypes);
  return std::sqrt(s);
}

void ema_update(ParamSet& ema, const ParamSet& cur, double coeff) {
  const double w = 1.0 - coeff;
  for (std::size_t l = 0; l < ema.weights.size(); ++l) {
    for (std::size_t i = 0; i < ema.weights[l].size(); ++i)
      ema.weights[l].data[i] = coeff * ema.weights[l].data[i] + w * cur.weights[l].data[i];
    for (std::size_t i = 0; i < ema.biases[l].size(); ++i)
      ema.biases[l].data[i] = coeff * ema.biases[l].data[i] + w * cur.biases[l].data[i];
  }
  for (std::size_t i = 0; i < ema.prototypes.size(); ++i)
    ema.prototypes.data[i] = coeff * ema.prototypes.data[i] + w * cur.prototypes.data[i];
}

}  // namespace

TrainResult train(const ParamSet& anchor, const FinetuneConfig& config, const Split& data) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");

  TrainState s = init_train_state(anchor, config);
  const Method method = config.method.method;
  const bool is_gmixout = method == Method::Gmixout;
  const bool is_mixout = method == Method::Mixout;
  const bool is_lora = method == Method::Lora;

  TrainResult result;
  result.log.header_note =
      "anchor_update=" +
      std::string(config.anchor_update == AnchorUpdate::Integrate ? "integrate" : "literal") +
      " method=" + config.method.name();
  result.log.rows.reserve(config.iterations);

  BatchIterator batches(data.size(), config.batch_size, s.order_rng);
  ParamSet ema = s.anchor;  // only consulted when moving_average > 0

  AdamMoments lora_moments;
  std::vector<double> lora_values;
  if (is_lora) {
    lora_values.resize(s.trainable_count());
    lora_moments.reset(lora_values.size());
  }

  const auto t0 = std::chrono::steady_clock::now();

  for (std::uint64_t iter = 0; iter < config.iterations; ++iter) {
    s.iter = iter;
    if (is_gmixout && s.episode_len > 0 && iter % s.episode_len == 0) {
      run_episode_boundary(s);
      result.log.anchor_checksums.emplace_back(s.episode, param_checksum(s.anchor));
    }
    if (is_mixout) {
      s.current_mask_pos =
          bernoulli_indices(s.maskable.size(), 1.0 - config.method.mask_prob, s.mask_rng);
    }

    const auto rows = batches.next();
    const Split batch = take_batch(data, rows);
    const ParamSet eff = state_effective_params(s);
    const Matrix logits = forward(eff, batch.x);
    const double batch_loss = loss(logits, batch.y, config.loss);
    const double lr = lr_at(iter, config.iterations, config.lr, config.warmup_fraction);
    const ParamSet dense_grad = backward(eff, batch.x, batch.y, config.loss);
    if (!std::isfinite(batch_loss)) throw TrainAbort(iter, lr, grad_norm(dense_grad));

    std::size_t nnz;
    if (is_lora) {
      nnz = lora_values.size();
      // gradient w.r.t. factors: dA = alpha * G * B^T, dB = alpha * A^T * G
      std::vector<double> g(lora_values.size(), 0.0);
      std::size_t off = 0;
      auto pack = [&](Matrix& dst_a, Matrix& dst_b, const Matrix& ga, const Matrix& gb) {
        for (std::size_t i = 0; i < ga.size(); ++i) g[off + i] = ga.data[i];
        for (std::size_t i = 0; i < dst_a.size(); ++i) lora_values[off + i] = dst_a.data[i];
        off += ga.size();
        for (std::size_t i = 0; i < gb.size(); ++i) g[off + i] = gb.data[i];
        for (std::size_t i = 0; i < dst_b.size(); ++i) lora_values[off + i] = dst_b.data[i];
        off += gb.size();
      };
      for (std::size_t l = 0; l < s.lora.a.size(); ++l) {
        Matrix ga = matmul(dense_grad.weights[l], transpose(s.lora.b[l]));
        Matrix gb = matmul(transpose(s.lora.a[l]), dense_grad.weights[l]);
        for (double& v : ga.data) v *= s.lora.alpha;
        for (double& v : gb.data) v *= s.lora.alpha;
        pack(s.lora.a[l], s.lora.b[l], ga, gb);
      }
      if (s.lora.include_prototypes) {
        Matrix ga = matmul(dense_grad.prototypes, transpose(s.lora.proto_b));
        Matrix gb = matmul(transpose(s.lora.proto_a), dense_grad.prototypes);
        for (double& v : ga.data) v *= s.lora.alpha;
        for (double& v : gb.data) v *= s.lora.alpha;
        pack(s.lora.proto_a, s.lora.proto_b, ga, gb);
      }
      if (s.lora.train_bias) {
        for (std::size_t l = 0; l < s.lora.bias_residual.size(); ++l) {
          for (std::size_t i = 0; i < s.lora.bias_residual[l].size(); ++i) {
            g[off + i] = dense_grad.biases[l].data[i];
            lora_values[off + i] = s.lora.bias_residual[l].data[i];
          }
          off += s.lora.bias_residual[l].size();
        }
      }
      adamw_step(lora_values, g, lora_moments, lr, config.weight_decay);
      // unpack
      off = 0;
      auto unpack = [&](Matrix& a, Matrix& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = lora_values[off + i];
        off += a.size();
        for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = lora_values[off + i];
        off += b.size();
      };
      for (std::size_t l = 0; l < s.lora.a.size(); ++l) unpack(s.lora.a[l], s.lora.b[l]);
      if (s.lora.include_prototypes) unpack(s.lora.proto_a, s.lora.proto_b);
      if (s.lora.train_bias) {
        for (auto& br : s.lora.bias_residual) {
          for (std::size_t i = 0; i < br.size(); ++i) br.data[i] = lora_values[off + i];
          off += br.size();
        }
      }
    } else {
      std::vector<double> g(s.delta.value_count() + s.bias_delta.value_count(), 0.0);
      if (is_mixout) {
        nnz = s.current_mask_pos.size() + s.bias_delta.value_count();
        for (std::size_t pos : s.current_mask_pos)
          g[pos] = s.rescale * dense_grad.get(s.delta.indices[pos]);
      } else {
        nnz = g.size();
        for (std::size_t i = 0; i < s.delta.indices.size(); ++i)
          g[i] = s.rescale * dense_grad.get(s.delta.indices[i]);
      }
      const std::size_t nb = s.bias_delta.value_count();
      for (std::size_t i = 0; i < nb; ++i)
        g[s.delta.value_count() + i] = dense_grad.get(s.bias_delta.indices[i]);
      std::vector<double> values = concat_values(s);
      adamw_step(values, g, s.moments, lr, config.weight_decay);
      split_values(s, values);
    }

    if (config.moving_average > 0.0) ema_update(ema, state_effective_params(s), config.moving_average);
    result.log.rows.push_back({iter, s.episode, batch_loss, lr, nnz});
  }

  const auto t1 = std::chrono::steady_clock::now();

  if (is_gmixout) {
    // terminal boundary: absorb the outstanding residual into the anchor
    run_episode_boundary(s);
    result.log.anchor_checksums.emplace_back(s.episode, param_checksum(s.anchor));
    result.final_params = s.anchor;
  } else if (is_lora) {
    result.final_params = merge_for_inference(s.anchor, s.lora);
  } else {
    // full / linear-probe / random-mask merge at rescale 1; mixout merges the
    // unrescaled dense residual (the expected effective weights).
    ParamSet merged = s.anchor;
    for (std::size_t i = 0; i < s.delta.indices.size(); ++i)
      merged.add(s.delta.indices[i], s.delta.values[i]);
    for (std::size_t i = 0; i < s.bias_delta.indices.size(); ++i)
      merged.add(s.bias_delta.indices[i], s.bias_delta.values[i]);
    result.final_params = merged;
  }
  if (config.moving_average > 0.0) result.final_params = ema;
  result.final_anchor = s.anchor;
  if (result.log.anchor_checksums.empty())
    result.log.anchor_checksums.emplace_back(0, param_checksum(s.anchor));

  result.cost.method = config.method.name();
  result.cost.trainable_total = s.trainable_count();
  if (method == Method::RandomMask || method == Method::Gmixout)
    result.cost.trainable_masked = s.delta.value_count();
  else if (is_mixout)
    result.cost.trainable_masked = s.maskable.size();
  else if (is_lora)
    result.cost.trainable_masked = s.lora.factor_value_count();
  result.cost.trainable_dense_bias = s.bias_delta.value_count();
  result.cost.resident_delta_values = is_lora ? s.lora.factor_value_count() : s.delta.value_count();
  result.cost.resident_bias_values = s.bias_delta.value_count();
  result.cost.resident_moment_values =
      is_lora ? 2 * lora_moments.m.size() : 2 * s.moments.m.size();
  if (config.iterations > 0) {
    result.cost.wall_ms_per_step =
        std::chrono::duration<double, std::milli>(t1 - t0).count() /
        static_cast<double>(config.iterations);
  }
  return result;
}

}  // namespace maskft
