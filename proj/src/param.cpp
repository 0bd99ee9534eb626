#include "maskft/param.hpp"

#include <cmath>
#include <stdexcept>

namespace maskft {

void SparseDelta::validate(std::size_t param_count) const {
  if (indices.size() != values.size())
    throw std::invalid_argument("SparseDelta: index/value length mismatch");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i > 0 && indices[i] <= indices[i - 1])
      throw std::invalid_argument("SparseDelta: indices must be strictly increasing");
    if (indices[i] >= param_count) throw std::out_of_range("SparseDelta: index out of range");
    if (!std::isfinite(values[i])) throw std::invalid_argument("SparseDelta: non-finite value");
  }
}

SparseDelta SparseDelta::zeros(std::vector<std::size_t> indices) {
  SparseDelta d;
  d.values.assign(indices.size(), 0.0);
  d.indices = std::move(indices);
  return d;
}

std::size_t LoraDelta::factor_value_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < a.size(); ++l) n += a[l].size() + b[l].size();
  if (include_prototypes) n += proto_a.size() + proto_b.size();
  return n;
}

MethodKind MethodKind::linear_probe() {
  MethodKind m;
  m.method = Method::LinearProbe;
  return m;
}

MethodKind MethodKind::lora(std::size_t rank, double alpha) {
  MethodKind m;
  m.method = Method::Lora;
  m.rank = rank;
  m.lora_alpha = alpha;
  return m;
}

MethodKind MethodKind::random_mask(double p) {
  MethodKind m;
  m.method = Method::RandomMask;
  m.mask_prob = p;
  return m;
}

MethodKind MethodKind::mixout(double p) {
  MethodKind m;
  m.method = Method::Mixout;
  m.mask_prob = p;
  return m;
}

MethodKind MethodKind::gmixout(double p, double lambda, std::uint64_t episodes) {
  MethodKind m;
  m.method = Method::Gmixout;
  m.mask_prob = p;
  m.ema_coeff = lambda;
  m.episodes = episodes;
  return m;
}

void MethodKind::validate() const {
  switch (method) {
    case Method::RandomMask:
    case Method::Mixout:
      if (!(mask_prob >= 0.0 && mask_prob < 1.0))
        throw std::invalid_argument("MethodKind: mask_prob must be in [0,1)");
      break;
    case Method::Gmixout:
      if (!(mask_prob >= 0.0 && mask_prob < 1.0))
        throw std::invalid_argument("MethodKind: mask_prob must be in [0,1)");
      if (!(ema_coeff >= 0.0 && ema_coeff <= 1.0))
        throw std::invalid_argument("MethodKind: ema_coeff must be in [0,1]");
      if (episodes == 0 && episode_len == 0)
        throw std::invalid_argument("MethodKind: gmixout needs episodes or episode_len >= 1");
      break;
    case Method::Lora:
      if (rank < 1) throw std::invalid_argument("MethodKind: rank must be >= 1");
      break;
    default:
      break;
  }
}

std::string MethodKind::name() const {
  switch (method) {
    case Method::Full: return "full";
    case Method::LinearProbe: return "linear_probe";
    case Method::Lora: return "lora";
    case Method::RandomMask: return "random_mask";
    case Method::Mixout: return "mixout";
    case Method::Gmixout: return "gmixout";
  }
  return "?";
}

double mask_rescale(double mask_prob) {
  if (!(mask_prob >= 0.0 && mask_prob < 1.0))
    throw std::invalid_argument("mask_rescale: mask_prob must be in [0,1)");
  return 1.0 / (1.0 - mask_prob);
}

ParamSet effective_params(const ParamSet& anchor, const SparseDelta& delta, double rescale) {
  if (!(rescale > 0.0)) throw std::invalid_argument("effective_params: rescale must be > 0");
  ParamSet out = anchor;
  for (std::size_t i = 0; i < delta.indices.size(); ++i) {
    out.add(delta.indices[i], rescale * delta.values[i]);  // throws out_of_range if invalid
  }
  return out;
}

ParamSet lora_materialize(const LoraDelta& lora, const ParamSet& anchor) {
  ParamSet res;
  res.spec = anchor.spec;
  res.weights.resize(anchor.weights.size());
  res.biases.resize(anchor.biases.size());
  if (lora.a.size() != anchor.weights.size())
    throw std::invalid_argument("lora_materialize: factor count does not match layer count");
  for (std::size_t l = 0; l < anchor.weights.size(); ++l) {
    if (lora.a[l].rows != anchor.weights[l].rows || lora.b[l].cols != anchor.weights[l].cols ||
        lora.a[l].cols != lora.b[l].rows)
      throw std::invalid_argument("lora_materialize: factor shape mismatch at layer " +
                                  std::to_string(l));
    res.weights[l] = matmul(lora.a[l], lora.b[l]);
    for (double& v : res.weights[l].data) v *= lora.alpha;
    if (lora.train_bias && l < lora.bias_residual.size() && !lora.bias_residual[l].empty()) {
      res.biases[l] = lora.bias_residual[l];
    } else {
      res.biases[l] = Matrix(1, anchor.biases[l].cols, 0.0);
    }
  }
  if (lora.include_prototypes && !lora.proto_a.empty()) {
    res.prototypes = matmul(lora.proto_a, lora.proto_b);
    for (double& v : res.prototypes.data) v *= lora.alpha;
  } else {
    res.prototypes = Matrix(anchor.prototypes.rows, anchor.prototypes.cols, 0.0);
  }
  return res;
}

ParamSet merge_for_inference(const ParamSet& anchor, const SparseDelta& delta, double rescale) {
  return effective_params(anchor, delta, rescale);
}

ParamSet merge_for_inference(const ParamSet& anchor, const LoraDelta& lora) {
  ParamSet res = lora_materialize(lora, anchor);
  ParamSet out = anchor;
  for (std::size_t l = 0; l < out.weights.size(); ++l) {
    for (std::size_t i = 0; i < out.weights[l].size(); ++i)
      out.weights[l].data[i] += res.weights[l].data[i];
    for (std::size_t i = 0; i < out.biases[l].size(); ++i)
      out.biases[l].data[i] += res.biases[l].data[i];
  }
  for (std::size_t i = 0; i < out.prototypes.size(); ++i)
    out.prototypes.data[i] += res.prototypes.data[i];
  return out;
}

std::vector<double> sparse_grad_project(const ParamSet& dense_grad,
                                        const std::vector<std::size_t>& indices, double rescale) {
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = rescale * dense_grad.get(indices[i]);
  return out;
}

std::vector<double> gather(const ParamSet& params, const std::vector<std::size_t>& indices) {
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = params.get(indices[i]);
  return out;
}

std::vector<std::size_t> maskable_indices(const ParamSet& params, bool include_prototypes) {
  std::vector<std::size_t> out;
  std::size_t off = 0;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    for (std::size_t i = 0; i < params.weights[l].size(); ++i) out.push_back(off + i);
    off += params.weights[l].size();
    off += params.biases[l].size();
  }
  if (include_prototypes) {
    for (std::size_t i = 0; i < params.prototypes.size(); ++i) out.push_back(off + i);
  }
  return out;
}

std::vector<std::size_t> all_indices(const ParamSet& params) {
  std::vector<std::size_t> out(params.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

LoraDelta init_lora(const ParamSet& anchor, std::size_t rank, double alpha, bool include_prototypes,
                    bool train_bias, Rng& rng) {
  if (rank < 1) throw std::invalid_argument("init_lora: rank must be >= 1");
  LoraDelta d;
  d.rank = rank;
  d.alpha = alpha > 0.0 ? alpha : 1.0 / static_cast<double>(rank);
  d.include_prototypes = include_prototypes;
  d.train_bias = train_bias;
  const double b_std = 1.0 / std::sqrt(static_cast<double>(rank));
  for (const Matrix& w : anchor.weights) {
    d.a.push_back(Matrix(w.rows, rank, 0.0));
    d.b.push_back(gaussian(rank, w.cols, 0.0, b_std, rng));
  }
  for (const Matrix& b : anchor.biases) d.bias_residual.push_back(Matrix(1, b.cols, 0.0));
  if (include_prototypes) {
    d.proto_a = Matrix(anchor.prototypes.rows, rank, 0.0);
    d.proto_b = gaussian(rank, anchor.prototypes.cols, 0.0, b_std, rng);
  }
  return d;
}

}  // namespace maskft
