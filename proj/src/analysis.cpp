#include "maskft/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace maskft {

namespace {

const double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double l2_sq_diff(const ParamSet& a, const ParamSet& b) {
  double s = 0.0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.get(i) - b.get(i);
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<int> predict(const ParamSet& params, const Matrix& x) {
  const Matrix logits = forward(params, x);
  std::vector<int> pred(logits.rows);
  for (std::size_t b = 0; b < logits.rows; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c)
      if (logits(b, c) > logits(b, best)) best = c;
    pred[b] = static_cast<int>(best);
  }
  return pred;
}

double accuracy(const ParamSet& params, const Split& split) {
  if (split.empty()) throw std::invalid_argument("accuracy: empty split");
  const auto pred = predict(params, split.x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == split.y[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

Matrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred,
                        std::size_t class_count) {
  Matrix m(class_count, class_count, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i)
    m(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i])) += 1.0;
  return m;
}

double accuracy_from_confusion(const Matrix& cm) {
  double diag = 0.0, total = 0.0;
  for (std::size_t i = 0; i < cm.rows; ++i)
    for (std::size_t j = 0; j < cm.cols; ++j) {
      total += cm(i, j);
      if (i == j) diag += cm(i, j);
    }
  return total > 0.0 ? diag / total : 0.0;
}

double balanced_accuracy_from_confusion(const Matrix& cm) {
  double sum = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < cm.rows; ++c) {
    double row = 0.0;
    for (std::size_t j = 0; j < cm.cols; ++j) row += cm(c, j);
    if (row > 0.0) {
      sum += cm(c, c) / row;
      ++classes;
    }
  }
  return classes > 0 ? sum / static_cast<double>(classes) : 0.0;
}

double macro_f1_from_confusion(const Matrix& cm) {
  double sum = 0.0;
  for (std::size_t c = 0; c < cm.rows; ++c) {
    double tp = cm(c, c), fn = 0.0, fp = 0.0;
    for (std::size_t j = 0; j < cm.cols; ++j) {
      if (j != c) {
        fn += cm(c, j);
        fp += cm(j, c);
      }
    }
    const double denom = 2.0 * tp + fp + fn;
    sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;  // 0/0 := 0
  }
  return cm.rows > 0 ? sum / static_cast<double>(cm.rows) : 0.0;
}

EvalReport evaluate(const ParamSet& params, const SplitBundle& bundle) {
  if (bundle.id_test.empty()) throw std::invalid_argument("evaluate: empty id-test split");
  EvalReport r;
  const auto pred = predict(params, bundle.id_test.x);
  r.confusion = confusion_matrix(bundle.id_test.y, pred, params.spec.class_count);
  r.id_accuracy = accuracy_from_confusion(r.confusion);
  r.balanced_accuracy = balanced_accuracy_from_confusion(r.confusion);
  r.macro_f1 = macro_f1_from_confusion(r.confusion);

  double ood_sum = 0.0;
  for (const auto& [name, split] : bundle.ood_tests) {
    if (split.empty()) throw std::invalid_argument("evaluate: empty ood split '" + name + "'");
    const double a = accuracy(params, split);
    r.ood_accuracy.emplace_back(name, a);
    ood_sum += a;
  }
  r.ood_average = r.ood_accuracy.empty()
                      ? kNan
                      : ood_sum / static_cast<double>(r.ood_accuracy.size());

  // many / medium / few by terciles of per-class train counts:
  // count > 66th percentile -> many, count < 33rd percentile -> few.
  r.many_accuracy = r.medium_accuracy = r.few_accuracy = kNan;
  const auto& counts = bundle.train_class_counts;
  if (!counts.empty() && counts.size() == params.spec.class_count) {
    std::vector<std::size_t> sorted = counts;
    std::sort(sorted.begin(), sorted.end());
    auto nearest_rank = [&sorted](double pct) {
      const std::size_t n = sorted.size();
      std::size_t rank = static_cast<std::size_t>(
          std::ceil(pct / 100.0 * static_cast<double>(n)));
      if (rank < 1) rank = 1;
      return sorted[rank - 1];
    };
    const std::size_t q33 = nearest_rank(33.0), q66 = nearest_rank(66.0);
    double sums[3] = {0, 0, 0};
    std::size_t ns[3] = {0, 0, 0};
    for (std::size_t c = 0; c < counts.size(); ++c) {
      double row = 0.0;
      for (std::size_t j = 0; j < r.confusion.cols; ++j) row += r.confusion(c, j);
      if (row == 0.0) continue;
      const double recall = r.confusion(c, c) / row;
      const int g = counts[c] > q66 ? 0 : (counts[c] < q33 ? 2 : 1);
      sums[g] += recall;
      ns[g]++;
    }
    if (ns[0]) r.many_accuracy = sums[0] / static_cast<double>(ns[0]);
    if (ns[1]) r.medium_accuracy = sums[1] / static_cast<double>(ns[1]);
    if (ns[2]) r.few_accuracy = sums[2] / static_cast<double>(ns[2]);
  }
  return r;
}

std::string EvalReport::csv_header(const std::vector<std::string>& ood_names) {
  std::string h = "id_acc,ood_avg,balanced_acc,many_acc,medium_acc,few_acc,macro_f1";
  for (const auto& n : ood_names) h += ",ood_" + n + "_acc";
  return h;
}

std::string EvalReport::csv_row() const {
  std::string row = fmt(id_accuracy) + "," + fmt(ood_average) + "," + fmt(balanced_accuracy) +
                    "," + fmt(many_accuracy) + "," + fmt(medium_accuracy) + "," +
                    fmt(few_accuracy) + "," + fmt(macro_f1);
  for (const auto& [name, acc] : ood_accuracy) row += "," + fmt(acc);
  return row;
}

ParamSet soup(const std::vector<ParamSet>& models) {
  if (models.empty()) throw std::invalid_argument("soup: no models");
  ParamSet out = models[0];
  for (std::size_t i = 1; i < models.size(); ++i) {
    if (!out.same_shape(models[i])) throw std::invalid_argument("soup: shape mismatch");
    const std::size_t n = out.size();
    for (std::size_t j = 0; j < n; ++j) out.add(j, models[i].get(j));
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  const std::size_t n = out.size();
  for (std::size_t j = 0; j < n; ++j) out.set(j, out.get(j) * inv);
  return out;
}

ParamSet wise_ft(const ParamSet& zero_shot, const ParamSet& finetuned, double coeff) {
  if (!(coeff >= 0.0 && coeff <= 1.0))
    throw std::invalid_argument("wise_ft: coeff must be in [0,1]");
  if (!zero_shot.same_shape(finetuned)) throw std::invalid_argument("wise_ft: shape mismatch");
  ParamSet out = zero_shot;
  const std::size_t n = out.size();
  for (std::size_t j = 0; j < n; ++j)
    out.set(j, (1.0 - coeff) * zero_shot.get(j) + coeff * finetuned.get(j));
  return out;
}

double regression_output(const ParamSet& params, const Matrix& x, std::size_t row) {
  const Matrix f = features(params, x);
  double s = 0.0;
  for (std::size_t j = 0; j < f.cols; ++j) s += f(row, j) * params.prototypes(0, j);
  return s;
}

std::vector<double> regression_outputs(const ParamSet& params, const Matrix& x) {
  const Matrix f = features(params, x);
  std::vector<double> out(f.rows, 0.0);
  for (std::size_t b = 0; b < f.rows; ++b)
    for (std::size_t j = 0; j < f.cols; ++j) out[b] += f(b, j) * params.prototypes(0, j);
  return out;
}

std::string BVCLReport::csv_header() {
  return "bias_squared,variance,covariance,locality,ensemble_size,reconstructed_error,direct_error";
}

std::string BVCLReport::csv_row() const {
  return fmt(bias_squared) + "," + fmt(variance) + "," + fmt(covariance) + "," + fmt(locality) +
         "," + std::to_string(ensemble_size) + "," + fmt(reconstructed_error) + "," +
         fmt(direct_error);
}

BVCLReport bvcl_estimate(const std::vector<ParamSet>& models, const RegressionSet& data,
                         BvclMode mode) {
  const std::size_t m = models.size();
  if (m < 2) throw std::invalid_argument("bvcl_estimate: need at least 2 models");
  if (data.y.empty()) throw std::invalid_argument("bvcl_estimate: empty dataset");

  std::vector<std::vector<double>> f(m);
  for (std::size_t i = 0; i < m; ++i) f[i] = regression_outputs(models[i], data.x);
  const std::size_t n = data.y.size();

  BVCLReport r;
  r.ensemble_size = m;
  const double md = static_cast<double>(m);
  double bias2 = 0.0, var = 0.0, cov = 0.0;
  std::vector<double> fbar(n, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < m; ++i) fbar[b] += f[i][b];
    fbar[b] /= md;
    const double d = data.y[b] - fbar[b];
    bias2 += d * d;
    double s_var = 0.0, s_sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double e = f[i][b] - fbar[b];
      s_var += e * e;
      s_sum += e;
    }
    // ordered pairs i != j: (sum e)^2 - sum e^2
    const double s_cov = s_sum * s_sum - s_var;
    var += s_var / md;
    cov += s_cov / (md * (md - 1.0));
  }
  const double invn = 1.0 / static_cast<double>(n);
  r.bias_squared = bias2 * invn;
  r.variance = var * invn;
  r.covariance = cov * invn;
  r.reconstructed_error = r.bias_squared + r.variance / md + r.covariance * (md - 1.0) / md;

  const ParamSet wa = soup(models);
  double loc = 0.0;
  for (const ParamSet& p : models) loc = std::max(loc, l2_sq_diff(p, wa));
  r.locality = loc;

  if (mode == BvclMode::PredictionEnsemble) {
    double err = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double d = data.y[b] - fbar[b];
      err += d * d;
    }
    r.direct_error = err * invn;
  } else {
    const auto fw = regression_outputs(wa, data.x);
    double err = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double d = data.y[b] - fw[b];
      err += d * d;
    }
    r.direct_error = err * invn;
  }
  return r;
}

void QuadraticProblem::validate() const {
  if (hessian.rows != hessian.cols)
    throw std::invalid_argument("QuadraticProblem: hessian must be square");
  if (gradient.size() != hessian.rows)
    throw std::invalid_argument("QuadraticProblem: gradient dim mismatch");
  for (std::size_t i = 0; i < hessian.rows; ++i) {
    for (std::size_t j = i + 1; j < hessian.cols; ++j)
      if (std::abs(hessian(i, j) - hessian(j, i)) > 1e-12)
        throw std::invalid_argument("QuadraticProblem: hessian not symmetric");
    if (hessian(i, i) < 0.0)
      throw std::invalid_argument("QuadraticProblem: negative diagonal curvature");
  }
}

double QuadraticProblem::value(const std::vector<double>& z) const {
  double v = base;
  for (std::size_t i = 0; i < z.size(); ++i) {
    v += gradient[i] * z[i];
    double hz = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) hz += hessian(i, j) * z[j];
    v += 0.5 * z[i] * hz;
  }
  return v;
}

double QuadraticProblem::min_diagonal() const {
  double m = hessian(0, 0);
  for (std::size_t i = 1; i < hessian.rows; ++i) m = std::min(m, hessian(i, i));
  return m;
}

double mixout_quadratic_expected_loss(const QuadraticProblem& problem,
                                      const std::vector<double>& delta, double mask_prob) {
  if (!(mask_prob >= 0.0 && mask_prob < 1.0))
    throw std::invalid_argument("mixout_quadratic_expected_loss: p must be in [0,1)");
  double v = problem.value(delta);
  const double factor = mask_prob / (2.0 * (1.0 - mask_prob));
  for (std::size_t j = 0; j < delta.size(); ++j)
    v += factor * problem.hessian(j, j) * delta[j] * delta[j];
  return v;
}

double mixout_quadratic_lower_bound(const QuadraticProblem& problem,
                                    const std::vector<double>& delta, double mask_prob) {
  double norm2 = 0.0;
  for (double d : delta) norm2 += d * d;
  const double mu_p = mask_prob * problem.min_diagonal();
  return problem.base + mu_p / (2.0 * (1.0 - mask_prob)) * norm2;
}

std::pair<double, double> mixout_quadratic_monte_carlo(const QuadraticProblem& problem,
                                                       const std::vector<double>& delta,
                                                       double mask_prob, std::size_t samples,
                                                       Rng& rng) {
  const double rescale = mask_rescale(mask_prob);
  const std::size_t d = delta.size();
  std::vector<double> z(d);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < d; ++j)
      z[j] = rng.next_double() < 1.0 - mask_prob ? rescale * delta[j] : 0.0;
    const double v = problem.value(z);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / static_cast<double>(samples);
  const double var = std::max(0.0, sum_sq / static_cast<double>(samples) - mean * mean);
  const double sem = std::sqrt(var / static_cast<double>(samples));
  return {mean, sem};
}

std::size_t forward_madds_per_example(const NetworkSpec& spec) {
  std::size_t madds = 0;
  std::size_t in = spec.input_dim;
  for (std::size_t h : spec.hidden_dims) {
    madds += in * h;
    in = h;
  }
  madds += in * spec.feature_dim;
  madds += spec.class_count * spec.feature_dim;  // prototype dot products
  return madds;
}

std::string CostReport::csv_header() {
  return "trainable_total,trainable_masked,trainable_dense_bias,resident_delta,resident_bias,"
         "resident_moments,madds_per_example";
}

std::string CostReport::csv_row() const {
  return std::to_string(counters.trainable_total) + "," + std::to_string(counters.trainable_masked) +
         "," + std::to_string(counters.trainable_dense_bias) + "," +
         std::to_string(counters.resident_delta_values) + "," +
         std::to_string(counters.resident_bias_values) + "," +
         std::to_string(counters.resident_moment_values) + "," + std::to_string(madds_per_example);
}

CostReport training_cost_report(const TrainResult& run, const NetworkSpec& spec) {
  CostReport r;
  r.counters = run.cost;
  r.madds_per_example = forward_madds_per_example(spec);
  std::size_t total = 0;
  std::size_t in = spec.input_dim;
  for (std::size_t h : spec.hidden_dims) {
    total += in * h + h;
    in = h;
  }
  total += in * spec.feature_dim + spec.feature_dim;
  total += spec.class_count * spec.feature_dim;
  r.param_total = total;
  return r;
}

}  // namespace maskft
