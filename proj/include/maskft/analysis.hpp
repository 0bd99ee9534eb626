#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "maskft/data.hpp"
#include "maskft/net.hpp"
#include "maskft/trainer.hpp"

namespace maskft {

/// Evaluation summary for one merged model. Group accuracies are NaN when
/// the group is empty (e.g. balanced datasets have no many/few classes).
struct EvalReport {
  double id_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> ood_accuracy;
  double ood_average = 0.0;  // NaN when no ood splits
  double balanced_accuracy = 0.0;
  double many_accuracy = 0.0, medium_accuracy = 0.0, few_accuracy = 0.0;
  double macro_f1 = 0.0;
  Matrix confusion;  // id-test, rows = true class, cols = predicted

  /// id_acc,ood_avg,balanced_acc,many_acc,medium_acc,few_acc,macro_f1,
  /// then one column per ood split in bundle order. NaN prints as an empty
  /// cell.
  static std::string csv_header(const std::vector<std::string>& ood_names);
  std::string csv_row() const;
};

std::vector<int> predict(const ParamSet& params, const Matrix& x);
double accuracy(const ParamSet& params, const Split& split);

/// Confusion matrix helpers; exposed so hand-built matrices can be checked.
Matrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred,
                        std::size_t class_count);
double accuracy_from_confusion(const Matrix& confusion);
double balanced_accuracy_from_confusion(const Matrix& confusion);
double macro_f1_from_confusion(const Matrix& confusion);

EvalReport evaluate(const ParamSet& params, const SplitBundle& bundle);

/// Coordinate-wise uniform mean of the given parameter sets.
ParamSet soup(const std::vector<ParamSet>& models);

/// (1 - coeff) * zero_shot + coeff * finetuned, per coordinate.
ParamSet wise_ft(const ParamSet& zero_shot, const ParamSet& finetuned, double coeff);

/// Scalar regression output used by the decomposition: first prototype row
/// dotted with the (unnormalized) features.
double regression_output(const ParamSet& params, const Matrix& x, std::size_t row);
std::vector<double> regression_outputs(const ParamSet& params, const Matrix& x);

struct RegressionSet {
  Matrix x;
  std::vector<double> y;
};

enum class BvclMode { PredictionEnsemble, WeightAverage };

struct BVCLReport {
  double bias_squared = 0.0;
  double variance = 0.0;
  double covariance = 0.0;
  double locality = 0.0;  // max_i ||phi_i - phi_wa||^2
  std::size_t ensemble_size = 0;
  double reconstructed_error = 0.0;  // bias^2 + var/M + cov (M-1)/M
  double direct_error = 0.0;

  static std::string csv_header();
  std::string csv_row() const;
};

/// Empirical bias^2 / variance / covariance / locality over the dataset.
/// Variance uses the 1/M normalizer and covariance the unordered-pair
/// 1/(M(M-1)) normalizer, which makes the prediction-ensemble identity exact.
/// Throws std::invalid_argument when fewer than two models are given.
BVCLReport bvcl_estimate(const std::vector<ParamSet>& models, const RegressionSet& data,
                         BvclMode mode);

/// Quadratic objective L(phi0 + z) = base + g.z + z^T H z / 2 around the
/// anchor, with H symmetric PSD.
struct QuadraticProblem {
  Matrix hessian;
  std::vector<double> gradient;
  double base = 0.0;

  void validate() const;
  double value(const std::vector<double>& z) const;
  double min_diagonal() const;
};

/// Exact expectation of the rescaled-masked quadratic objective over
/// independent Bernoulli masks:
///   base + g.delta + delta^T H delta / 2 + p/(2(1-p)) * sum_j H_jj delta_j^2.
double mixout_quadratic_expected_loss(const QuadraticProblem& problem,
                                      const std::vector<double>& delta, double mask_prob);

/// Lower bound base + mu(p)/(2(1-p)) ||delta||^2 with mu(p) = p * min_j H_jj.
double mixout_quadratic_lower_bound(const QuadraticProblem& problem,
                                    const std::vector<double>& delta, double mask_prob);

/// Monte-Carlo estimate over `samples` Bernoulli masks. Returns the mean and
/// the standard error of the mean.
std::pair<double, double> mixout_quadratic_monte_carlo(const QuadraticProblem& problem,
                                                       const std::vector<double>& delta,
                                                       double mask_prob, std::size_t samples,
                                                       Rng& rng);

struct CostReport {
  CostCounters counters;
  std::size_t madds_per_example = 0;  // analytic: sum of m*n per layer + C*k head
  std::size_t param_total = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

/// Per-example forward multiply-add count from the layer shapes.
std::size_t forward_madds_per_example(const NetworkSpec& spec);

CostReport training_cost_report(const TrainResult& run, const NetworkSpec& spec);

}  // namespace maskft
