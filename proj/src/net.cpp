#include "maskft/net.hpp"

#include <cmath>
#include <stdexcept>

namespace maskft {

namespace {
constexpr double kNormEps = 1e-12;

double activate(double z, Activation a) {
  return a == Activation::Tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

double activate_grad(double z, Activation a) {
  if (a == Activation::Tanh) {
    const double t = std::tanh(z);
    return 1.0 - t * t;
  }
  return z > 0.0 ? 1.0 : 0.0;
}

// Row-normalize by (||row|| + eps); returns norms for the backward pass.
Matrix normalize_rows(const Matrix& m, std::vector<double>& norms) {
  Matrix out(m.rows, m.cols);
  norms.resize(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += m(i, j) * m(i, j);
    const double n = std::sqrt(s);
    norms[i] = n;
    const double inv = 1.0 / (n + kNormEps);
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(i, j) * inv;
  }
  return out;
}

// Gradient through v -> v / (||v|| + eps) for one row.
// d/dv_j = delta_ij/(n+eps) - v_i v_j / ((n+eps)^2 n); the second term is
// dropped for n == 0 where the direction derivative vanishes with v.
void normalize_backward_row(const double* v, const double* grad_out, double norm,
                            std::size_t dim, double* grad_in) {
  const double g = norm + kNormEps;
  double dot = 0.0;
  for (std::size_t j = 0; j < dim; ++j) dot += v[j] * grad_out[j];
  const double corr = norm > 0.0 ? dot / (g * g * norm) : 0.0;
  for (std::size_t j = 0; j < dim; ++j) grad_in[j] = grad_out[j] / g - v[j] * corr;
}

struct Workspace {
  std::vector<Matrix> pre;    // pre-activations per hidden layer
  std::vector<Matrix> post;   // post-activations (post[0] = input)
  Matrix feat;                // batch x k, unnormalized
  Matrix feat_hat;            // normalized features
  Matrix proto_hat;           // normalized prototypes
  std::vector<double> feat_norms, proto_norms;
  Matrix logits;
};

Workspace run_forward(const ParamSet& p, const Matrix& x) {
  const auto& spec = p.spec;
  if (x.cols != spec.input_dim) throw std::invalid_argument("forward: input dim mismatch");
  Workspace ws;
  ws.post.push_back(x);
  Matrix cur = x;
  for (std::size_t l = 0; l < spec.hidden_dims.size(); ++l) {
    Matrix z = matmul(cur, p.weights[l]);
    for (std::size_t i = 0; i < z.rows; ++i)
      for (std::size_t j = 0; j < z.cols; ++j) z(i, j) += p.biases[l](0, j);
    ws.pre.push_back(z);
    Matrix a(z.rows, z.cols);
    for (std::size_t i = 0; i < z.size(); ++i) a.data[i] = activate(z.data[i], spec.activation);
    ws.post.push_back(a);
    cur = a;
  }
  const std::size_t lf = spec.hidden_dims.size();
  ws.feat = matmul(cur, p.weights[lf]);
  for (std::size_t i = 0; i < ws.feat.rows; ++i)
    for (std::size_t j = 0; j < ws.feat.cols; ++j) ws.feat(i, j) += p.biases[lf](0, j);
  ws.feat_hat = normalize_rows(ws.feat, ws.feat_norms);
  ws.proto_hat = normalize_rows(p.prototypes, ws.proto_norms);
  ws.logits = matmul(ws.feat_hat, transpose(ws.proto_hat));
  const double inv_t = 1.0 / spec.temperature;
  for (double& v : ws.logits.data) v *= inv_t;
  return ws;
}

std::vector<double> log_offsets(const LossKind& kind, std::size_t class_count) {
  std::vector<double> off(class_count, 0.0);
  if (kind.type == LossType::LogitAdjusted) {
    kind.validate(class_count);
    for (std::size_t c = 0; c < class_count; ++c) off[c] = std::log(kind.priors[c]);
  }
  return off;
}

// Mean NLL and, when grad != nullptr, d(loss)/d(logits).
double loss_and_grad(const Matrix& logits, const std::vector<int>& labels, const LossKind& kind,
                     Matrix* grad) {
  if (labels.size() != logits.rows) throw std::invalid_argument("loss: label count mismatch");
  const std::size_t C = logits.cols;
  const auto off = log_offsets(kind, C);
  if (grad) *grad = Matrix(logits.rows, C, 0.0);
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(logits.rows);
  std::vector<double> row(C);
  for (std::size_t b = 0; b < logits.rows; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw std::invalid_argument("loss: label out of range at row " + std::to_string(b));
    double mx = -1e300;
    for (std::size_t c = 0; c < C; ++c) {
      row[c] = logits(b, c) + off[c];
      if (row[c] > mx) mx = row[c];
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[static_cast<std::size_t>(y)];
    if (grad) {
      for (std::size_t c = 0; c < C; ++c) {
        double p = std::exp(row[c] - lse);
        (*grad)(b, c) = (p - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) * inv_b;
      }
    }
  }
  return total * inv_b;
}

}  // namespace

void NetworkSpec::validate() const {
  if (input_dim < 1 || feature_dim < 1 || class_count < 1)
    throw std::invalid_argument("NetworkSpec: all dims must be >= 1");
  if (hidden_dims.empty()) throw std::invalid_argument("NetworkSpec: need at least one hidden layer");
  for (std::size_t h : hidden_dims)
    if (h < 1) throw std::invalid_argument("NetworkSpec: hidden dims must be >= 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("NetworkSpec: temperature must be > 0");
}

std::size_t ParamSet::size() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n + prototypes.size();
}

std::vector<ParamSet::BlockRange> ParamSet::layout() const {
  std::vector<BlockRange> out;
  std::size_t off = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back({"w" + std::to_string(l), off, weights[l].size()});
    off += weights[l].size();
    out.push_back({"b" + std::to_string(l), off, biases[l].size()});
    off += biases[l].size();
  }
  out.push_back({"prototypes", off, prototypes.size()});
  return out;
}

namespace {
// Resolves a global index to a concrete scalar slot.
double* resolve(ParamSet& p, std::size_t index) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    if (index < p.weights[l].size()) return &p.weights[l].data[index];
    index -= p.weights[l].size();
    if (index < p.biases[l].size()) return &p.biases[l].data[index];
    index -= p.biases[l].size();
  }
  if (index < p.prototypes.size()) return &p.prototypes.data[index];
  throw std::out_of_range("ParamSet: global index out of range");
}
}  // namespace

double ParamSet::get(std::size_t index) const {
  return *resolve(const_cast<ParamSet&>(*this), index);
}
void ParamSet::set(std::size_t index, double value) { *resolve(*this, index) = value; }
void ParamSet::add(std::size_t index, double value) { *resolve(*this, index) += value; }

std::pair<std::size_t, std::size_t> ParamSet::prototype_range() const {
  const std::size_t total = size();
  return {total - prototypes.size(), total};
}

std::vector<std::size_t> ParamSet::bias_indices() const {
  std::vector<std::size_t> out;
  std::size_t off = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    off += weights[l].size();
    for (std::size_t i = 0; i < biases[l].size(); ++i) out.push_back(off + i);
    off += biases[l].size();
  }
  return out;
}

bool ParamSet::same_shape(const ParamSet& other) const {
  if (weights.size() != other.weights.size()) return false;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows != other.weights[l].rows || weights[l].cols != other.weights[l].cols)
      return false;
    if (biases[l].cols != other.biases[l].cols) return false;
  }
  return prototypes.rows == other.prototypes.rows && prototypes.cols == other.prototypes.cols;
}

ParamSet init_params(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  ParamSet p;
  p.spec = spec;
  std::size_t in = spec.input_dim;
  for (std::size_t h : spec.hidden_dims) {
    p.weights.push_back(gaussian(in, h, 0.0, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    p.biases.push_back(Matrix(1, h, 0.0));
    in = h;
  }
  p.weights.push_back(
      gaussian(in, spec.feature_dim, 0.0, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  p.biases.push_back(Matrix(1, spec.feature_dim, 0.0));
  p.prototypes = gaussian(spec.class_count, spec.feature_dim, 0.0,
                          1.0 / std::sqrt(static_cast<double>(spec.feature_dim)), rng);
  return p;
}

LossKind LossKind::logit_adjusted(std::vector<double> priors) {
  LossKind k;
  k.type = LossType::LogitAdjusted;
  k.priors = std::move(priors);
  return k;
}

void LossKind::validate(std::size_t class_count) const {
  if (type != LossType::LogitAdjusted) return;
  if (priors.empty()) throw std::invalid_argument("LossKind: logit-adjusted loss needs priors");
  if (class_count > 0 && priors.size() != class_count)
    throw std::invalid_argument("LossKind: priors length must equal class count");
  double s = 0.0;
  for (double p : priors) {
    if (!(p > 0.0)) throw std::invalid_argument("LossKind: priors must be > 0");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("LossKind: priors must sum to 1");
}

Matrix head_logits(const Matrix& features, const Matrix& prototypes, double temperature) {
  std::vector<double> fn, pn;
  Matrix fh = normalize_rows(features, fn);
  Matrix ph = normalize_rows(prototypes, pn);
  Matrix logits = matmul(fh, transpose(ph));
  const double inv_t = 1.0 / temperature;
  for (double& v : logits.data) v *= inv_t;
  return logits;
}

Matrix forward(const ParamSet& params, const Matrix& x) { return run_forward(params, x).logits; }

Matrix features(const ParamSet& params, const Matrix& x) { return run_forward(params, x).feat; }

double loss(const Matrix& logits, const std::vector<int>& labels, const LossKind& kind) {
  return loss_and_grad(logits, labels, kind, nullptr);
}

double forward_loss(const ParamSet& params, const Matrix& x, const std::vector<int>& labels,
                    const LossKind& kind) {
  return loss(forward(params, x), labels, kind);
}

ParamSet backward(const ParamSet& params, const Matrix& x, const std::vector<int>& labels,
                  const LossKind& kind) {
  const auto& spec = params.spec;
  Workspace ws = run_forward(params, x);
  Matrix dlogits;
  loss_and_grad(ws.logits, labels, kind, &dlogits);
  const double inv_t = 1.0 / spec.temperature;

  ParamSet grad;
  grad.spec = spec;
  grad.weights.resize(params.weights.size());
  grad.biases.resize(params.biases.size());
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    grad.weights[l] = Matrix(params.weights[l].rows, params.weights[l].cols, 0.0);
    grad.biases[l] = Matrix(1, params.biases[l].cols, 0.0);
  }
  grad.prototypes = Matrix(params.prototypes.rows, params.prototypes.cols, 0.0);

  // Head: logits = feat_hat * proto_hat^T / tau.
  Matrix dfeat_hat = matmul(dlogits, ws.proto_hat);
  for (double& v : dfeat_hat.data) v *= inv_t;
  Matrix dproto_hat = matmul(transpose(dlogits), ws.feat_hat);
  for (double& v : dproto_hat.data) v *= inv_t;

  const std::size_t k = spec.feature_dim;
  Matrix dfeat(ws.feat.rows, k);
  for (std::size_t b = 0; b < ws.feat.rows; ++b) {
    normalize_backward_row(&ws.feat.data[b * k], &dfeat_hat.data[b * k], ws.feat_norms[b], k,
                           &dfeat.data[b * k]);
  }
  for (std::size_t c = 0; c < params.prototypes.rows; ++c) {
    normalize_backward_row(&params.prototypes.data[c * k], &dproto_hat.data[c * k],
                           ws.proto_norms[c], k, &grad.prototypes.data[c * k]);
  }

  // Feature projection layer (linear).
  const std::size_t lf = spec.hidden_dims.size();
  grad.weights[lf] = matmul(transpose(ws.post[lf]), dfeat);
  for (std::size_t i = 0; i < dfeat.rows; ++i)
    for (std::size_t j = 0; j < dfeat.cols; ++j) grad.biases[lf](0, j) += dfeat(i, j);
  Matrix dcur = matmul(dfeat, transpose(params.weights[lf]));

  // Hidden layers, in reverse.
  for (std::size_t l = spec.hidden_dims.size(); l-- > 0;) {
    Matrix dz(dcur.rows, dcur.cols);
    for (std::size_t i = 0; i < dz.size(); ++i)
      dz.data[i] = dcur.data[i] * activate_grad(ws.pre[l].data[i], spec.activation);
    grad.weights[l] = matmul(transpose(ws.post[l]), dz);
    for (std::size_t i = 0; i < dz.rows; ++i)
      for (std::size_t j = 0; j < dz.cols; ++j) grad.biases[l](0, j) += dz(i, j);
    if (l > 0) dcur = matmul(dz, transpose(params.weights[l]));
  }
  return grad;
}

Matrix prototypes_from_class_means(const ParamSet& params, const Matrix& probe_x,
                                   const std::vector<int>& probe_y, std::size_t class_count) {
  Matrix feats = features(params, probe_x);
  Matrix protos(class_count, params.spec.feature_dim, 0.0);
  std::vector<std::size_t> counts(class_count, 0);
  for (std::size_t i = 0; i < probe_y.size(); ++i) {
    const int y = probe_y[i];
    if (y < 0 || static_cast<std::size_t>(y) >= class_count)
      throw std::invalid_argument("prototypes_from_class_means: label out of range");
    for (std::size_t j = 0; j < protos.cols; ++j) protos(y, j) += feats(i, j);
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < class_count; ++c) {
    if (counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[c]);
    for (std::size_t j = 0; j < protos.cols; ++j) protos(c, j) *= inv;
  }
  return protos;
}

}  // namespace maskft
