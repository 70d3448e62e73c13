#pragma once

#include "bifa/common.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace bifa {

/// Per-chain random stream. Every sampler owns one; nothing in the library
/// touches a global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform();       // (0, 1), never exactly 0
  double normal();        // N(0, 1)
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double exponential(double rate);
  /// Gamma with shape/rate parameterization. Shapes below 1e-3 go through
  /// the inverse CDF instead of the rejection sampler.
  double gamma(double shape, double rate);
  /// Inverse gamma IG(shape, scale): 1 / Gamma(shape, rate = scale).
  double inv_gamma(double shape, double scale) { return 1.0 / gamma(shape, scale); }
  /// Generalized inverse Gaussian with density ∝ x^(lambda-1) exp(-(chi/x + psi x)/2).
  double gig(double lambda, double chi, double psi);
  /// Inverse Gaussian with the given mean and shape.
  double inv_gaussian(double mean, double shape);
  double beta(double a, double b);
  std::uint64_t poisson(double mean);
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  Vector normal_vector(Index n);
  Matrix normal_matrix(Index rows, Index cols);
  Vector dirichlet(const Vector& alpha);

  std::mt19937_64& engine() { return engine_; }

  /// Text snapshot of the full generator state (engine and the cached
  /// normal deviate), used by checkpoints.
  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Derive an independent stream seed from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace bifa
