#pragma once

// Shared helpers for the test suites. Everything here is an independent
// check-side tool; nothing routes through the library paths it verifies.

#include <algorithm>
#include <cmath>
#include <vector>

#include "maskft/net.hpp"
#include "maskft/tensor.hpp"

namespace testsupport {

using maskft::Matrix;

/// Singular values by one-sided Jacobi, descending. Good to ~1e-13 on the
/// small matrices used in tests.
inline std::vector<double> singular_values(Matrix a) {
  // rotate columns of a until pairwise orthogonal; singular values are the
  // final column norms
  const std::size_t n = a.cols;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < a.rows; ++i) {
          app += a(i, p) * a(i, p);
          aqq += a(i, q) * a(i, q);
          apq += a(i, p) * a(i, q);
        }
        off = std::max(off, std::abs(apq));
        if (std::abs(apq) < 1e-15 * std::sqrt(app * aqq) || apq == 0.0) continue;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < a.rows; ++i) {
          const double vp = a(i, p), vq = a(i, q);
          a(i, p) = c * vp - s * vq;
          a(i, q) = s * vp + c * vq;
        }
      }
    }
    if (off < 1e-15) break;
  }
  std::vector<double> sv(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) s += a(i, j) * a(i, j);
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

/// Upper chi-square quantile via the Wilson-Hilferty cube approximation.
/// z is the standard-normal quantile of the target level (3.0902 for 0.999).
inline double chi2_critical(std::size_t dof, double z) {
  const double k = static_cast<double>(dof);
  const double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
  return k * t * t * t;
}

/// Central-difference derivative of f w.r.t. one coordinate of a ParamSet.
template <typename F>
double central_diff(maskft::ParamSet& params, std::size_t index, double h, F&& f) {
  const double orig = params.get(index);
  params.set(index, orig + h);
  const double up = f(params);
  params.set(index, orig - h);
  const double down = f(params);
  params.set(index, orig);
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline maskft::NetworkSpec small_spec(std::size_t in = 5, std::size_t hidden = 7,
                                      std::size_t feat = 4, std::size_t classes = 3,
                                      double tau = 1.0) {
  maskft::NetworkSpec s;
  s.input_dim = in;
  s.hidden_dims = {hidden};
  s.feature_dim = feat;
  s.class_count = classes;
  s.temperature = tau;
  return s;
}

inline bool params_bit_equal(const maskft::ParamSet& a, const maskft::ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.get(i) != b.get(i)) return false;
  return true;
}

}  // namespace testsupport
