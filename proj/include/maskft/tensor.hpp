#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace maskft {

/// Dense row-major matrix of 64-bit floats.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix identity(std::size_t n);
bool all_finite(const Matrix& a);

/// Counter-based pseudo-random generator. The output sequence is a pure
/// function of (seed, stream), bit-identical across runs and platforms.
/// Distinct streams under the same seed start from distinct keys, so they
/// never alias; split() derives further independent substreams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1), 53-bit resolution.
  double next_double();
  double next_gaussian(double mean, double stddev);
  /// Uniform integer in [0, n), unbiased. n must be > 0.
  std::size_t next_below(std::size_t n);

  Rng split(std::uint64_t substream) const;

 private:
  Rng() = default;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

/// Each index in [0, n) is kept independently with probability keep_prob.
/// Result is strictly increasing. Throws std::invalid_argument if keep_prob
/// is outside [0, 1].
std::vector<std::size_t> bernoulli_indices(std::size_t n, double keep_prob, Rng& rng);

/// Matrix with i.i.d. N(mean, stddev^2) entries. stddev must be >= 0.
Matrix gaussian(std::size_t rows, std::size_t cols, double mean, double stddev, Rng& rng);

/// In-place Fisher-Yates shuffle driven by the given rng.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = rng.next_below(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace maskft
