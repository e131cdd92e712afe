#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace tulm {

// Seedable random stream. Identical (seed, stream_id) pairs produce identical
// sequences; distinct stream ids are decorrelated through a splitmix64 seed
// expansion. A stream is owned by exactly one chain or replicate.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  // Child stream keyed by `child`; deterministic in (seed, stream_id, child).
  RngStream split(std::uint64_t child) const;

  double uniform();  // open interval (0, 1)
  double normal();
  double exponential();
  double gamma(double shape);  // unit scale
  std::int64_t binomial(std::int64_t trials, double p);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

// N(precision^{-1} * linear, precision^{-1}); the covariance is never formed.
struct PrecisionGaussian {
  Eigen::MatrixXd precision;
  Eigen::VectorXd linear;
};

// Number of series terms used for the fractional part of a Polya-Gamma shape.
inline constexpr int kPolyaGammaTruncation = 200;

// PG(b, c). Integer part of b: sum of exact PG(1, c) draws (alternating-series
// rejection sampler). Fractional part: the defining gamma series truncated at
// `truncation` terms, with the discarded tail replaced by one gamma variate
// matching its mean and variance, so the first two moments are exact.
double draw_polya_gamma(double b, double c, RngStream& rng,
                        int truncation = kPolyaGammaTruncation);

// Exact PG(1, c).
double draw_polya_gamma_one(double c, RngStream& rng);

// N(mean, var) restricted to (lo, hi).
//  - interval holding at least 25% of the mass: plain rejection;
//  - narrow interval across the mode: uniform proposal with exp(-x^2/2) acceptance;
//  - one-sided tail up to 30 sd: inverse CDF on the survival scale;
//  - beyond 30 sd: exponential rejection.
double draw_truncated_normal(double mean, double var, double lo, double hi,
                             RngStream& rng);

// Shape-rate parameterization: density proportional to x^{-shape-1} exp(-rate/x).
double draw_inverse_gamma(double shape, double rate, RngStream& rng);

Eigen::VectorXd draw_mvn_precision(const PrecisionGaussian& g, RngStream& rng);

// Mean of a PrecisionGaussian (solve only).
Eigen::VectorXd precision_gaussian_mean(const PrecisionGaussian& g);

}  // namespace tulm
