#include "maskft/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace maskft {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("matmul: shape mismatch (" + std::to_string(a.rows) + "x" +
                                std::to_string(a.cols) + ") * (" + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols) + ")");
  }
  Matrix out(a.rows, b.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) {
        out(i, j) += aik * b(k, j);
      }
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

Matrix identity(std::size_t n) {
  Matrix out(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

bool all_finite(const Matrix& a) {
  for (double v : a.data)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer; bijective on uint64.
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  // stream -> key is injective for a fixed seed (odd multiplier, then a
  // bijective finalizer), so distinct streams cannot collide.
  key_ = mix64(mix64(seed) ^ (kGolden * (stream + 1)));
}

std::uint64_t Rng::next_u64() { return mix64(key_ + kGolden * (counter_++)); }

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian(double mean, double stddev) {
  if (stddev < 0.0) throw std::invalid_argument("next_gaussian: stddev must be >= 0");
  // Box-Muller, one fresh pair of uniforms per sample; no cached spare so the
  // draw count per call is fixed.
  const double u1 = 1.0 - next_double();  // (0, 1], safe for log
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
}

std::size_t Rng::next_below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("next_below: n must be > 0");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = (~std::uint64_t{0} / bound) * bound;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

Rng Rng::split(std::uint64_t substream) const {
  Rng child;
  // Domain-separated from the (seed, stream) constructor by a different
  // multiplier so a split stream cannot collide with a top-level one.
  child.key_ = mix64(key_ ^ (0xD1B54A32D192ED03ULL * (substream + 1)));
  return child;
}

std::vector<std::size_t> bernoulli_indices(std::size_t n, double keep_prob, Rng& rng) {
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) {
    throw std::invalid_argument("bernoulli_indices: keep_prob must be in [0,1]");
  }
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(keep_prob * static_cast<double>(n)) + 16);
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.next_double() < keep_prob) out.push_back(i);
  }
  return out;
}

Matrix gaussian(std::size_t rows, std::size_t cols, double mean, double stddev, Rng& rng) {
  if (stddev < 0.0) throw std::invalid_argument("gaussian: stddev must be >= 0");
  Matrix out(rows, cols);
  for (double& v : out.data) v = rng.next_gaussian(mean, stddev);
  return out;
}

}  // namespace maskft
