#include "tulm/rng.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/special_functions/erf.hpp>

#include "tulm/error.hpp"

namespace tulm {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kPiSq = kPi * kPi;
// Truncation point of the two-piece proposal for J*(1, c).
constexpr double kJTrunc = 2.0 / kPi;

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream_id) {
  std::uint64_t state = seed ^ (stream_id * 0xd1b54a32d192ed03ULL);
  std::uint64_t mix = splitmix64(state) ^ stream_id;
  std::seed_seq::result_type words[8];
  for (int i = 0; i < 8; i += 2) {
    const std::uint64_t v = splitmix64(mix);
    words[i] = static_cast<std::seed_seq::result_type>(v & 0xffffffffULL);
    words[i + 1] = static_cast<std::seed_seq::result_type>(v >> 32);
  }
  std::seed_seq seq(std::begin(words), std::end(words));
  return std::mt19937_64(seq);
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Upper tail probability Q(x) = P(Z > x).
double norm_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

// Q^{-1}(p) for p in (0, 1).
double norm_isf(double p) { return std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p); }

// Coefficient a_n(x) of the alternating series for the J*(1, 0) density.
double jacobi_coef(int n, double x) {
  const double k = n + 0.5;
  if (x <= kJTrunc) {
    return std::exp(std::log(kPi) + std::log(k) + 1.5 * (std::log(2.0 / kPi) - std::log(x)) -
                    2.0 * k * k / x);
  }
  return kPi * k * std::exp(-k * k * kPiSq * x / 2.0);
}

// Inverse-Gaussian(mu = 1/z, shape 1) truncated to (0, kJTrunc).
double draw_truncated_inverse_gaussian(double z, RngStream& rng) {
  const double t = kJTrunc;
  if (z < 1.0 / t) {
    // mu > t: propose from the truncated z = 0 limit and thin by exp(-z^2 x / 2).
    double x = 0.0;
    double alpha = 0.0;
    do {
      double e1 = 0.0;
      double e2 = 0.0;
      do {
        e1 = rng.exponential();
        e2 = rng.exponential();
      } while (e1 * e1 > 2.0 * e2 / t);
      x = 1.0 + e1 * t;
      x = t / (x * x);
      alpha = std::exp(-0.5 * z * z * x);
    } while (rng.uniform() > alpha);
    return x;
  }
  const double mu = 1.0 / z;
  double x = t + 1.0;
  while (x >= t) {
    const double n = rng.normal();
    const double y = n * n;
    x = mu + 0.5 * mu * mu * y - 0.5 * mu * std::sqrt(4.0 * mu * y + (mu * y) * (mu * y));
    if (rng.uniform() > mu / (mu + x)) x = mu * mu / x;
  }
  return x;
}

// Probability that the J*(1, z) proposal uses the exponential piece.
double exponential_piece_probability(double z, double k) {
  const double t = kJTrunc;
  const double w = std::sqrt(1.0 / t);
  // q / p with p = (pi / 2K) e^{-Kt}, q = 2 e^{-z} IG_cdf(t | 1/z, 1).
  const double log_a = std::log(4.0) - std::log(kPi) - z + std::log(k) + k * t;
  const double f1 = std::exp(log_a + std::log(norm_cdf(w * (t * z - 1.0))));
  const double f2 = std::exp(log_a + 2.0 * z + std::log(norm_cdf(-w * (t * z + 1.0))));
  return 1.0 / (1.0 + f1 + f2);
}

// Exponential rejection for N(0,1) restricted to (a, b) with a > 0.
double tail_exponential_rejection(double a, double b, RngStream& rng) {
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double x = a + rng.exponential() / lambda;
    if (x >= b) continue;
    const double d = x - lambda;
    if (rng.uniform() <= std::exp(-0.5 * d * d)) return x;
  }
}

// Standard normal restricted to (a, b).
double draw_std_truncated(double a, double b, RngStream& rng) {
  // Reflect so that the interval never lies entirely below zero.
  if (b <= 0.0) return -draw_std_truncated(-b, -a, rng);

  if (a < 0.0) {
    const double mass = norm_cdf(b) - norm_cdf(a);
    if (mass >= 0.25) {
      for (;;) {
        const double x = rng.normal();
        if (x > a && x < b) return x;
      }
    }
    // Narrow interval containing the mode: density bounded by 1.
    for (;;) {
      const double x = a + (b - a) * rng.uniform();
      if (rng.uniform() <= std::exp(-0.5 * x * x)) return x;
    }
  }

  // 0 <= a < b
  if (norm_sf(a) - norm_sf(b) >= 0.25) {
    for (;;) {
      const double x = rng.normal();
      if (x > a && x < b) return x;
    }
  }
  if (a < 30.0) {
    const double pa = norm_sf(a);
    const double pb = std::isinf(b) ? 0.0 : norm_sf(b);
    for (;;) {
      const double u = pb + (pa - pb) * rng.uniform();
      if (u <= 0.0 || u >= 1.0) continue;
      const double x = norm_isf(u);
      if (x > a && x < b) return x;
      if (x <= a) return std::nextafter(a, b);
      return std::nextafter(b, a);
    }
  }
  return tail_exponential_rejection(a, b, rng);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

RngStream RngStream::split(std::uint64_t child) const {
  std::uint64_t x = stream_id_ * 0x9e3779b97f4a7c15ULL + child + 1;
  return RngStream(seed_, splitmix64(x));
}

double RngStream::uniform() {
  for (;;) {
    const double u = std::generate_canonical<double, 53>(engine_);
    if (u > 0.0 && u < 1.0) return u;
  }
}

double RngStream::normal() { return normal_(engine_); }

double RngStream::exponential() { return -std::log(uniform()); }

double RngStream::gamma(double shape) {
  std::gamma_distribution<double> dist(shape, 1.0);
  return dist(engine_);
}

std::int64_t RngStream::binomial(std::int64_t trials, double p) {
  if (trials <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return trials;
  std::binomial_distribution<std::int64_t> dist(trials, p);
  return dist(engine_);
}

double draw_polya_gamma_one(double c, RngStream& rng) {
  const double z = 0.5 * std::fabs(c);
  const double k = z * z / 2.0 + kPiSq / 8.0;
  const double p_exp = exponential_piece_probability(z, k);
  for (;;) {
    double x = 0.0;
    if (rng.uniform() < p_exp) {
      x = kJTrunc + rng.exponential() / k;
    } else {
      x = draw_truncated_inverse_gaussian(z, rng);
    }
    double s = jacobi_coef(0, x);
    const double y = rng.uniform() * s;
    bool accepted = false;
    for (int n = 1;; ++n) {
      if (n % 2 == 1) {
        s -= jacobi_coef(n, x);
        if (y <= s) {
          accepted = true;
          break;
        }
      } else {
        s += jacobi_coef(n, x);
        if (y > s) break;
      }
    }
    if (accepted) return 0.25 * x;
  }
}

double draw_polya_gamma(double b, double c, RngStream& rng, int truncation) {
  if (!(b > 0.0) || !std::isfinite(b)) {
    std::ostringstream os;
    os << "Polya-Gamma shape must be positive, got " << b;
    throw NumericError(os.str());
  }
  const double whole = std::floor(b);
  const double frac = b - whole;
  double x = 0.0;
  for (long i = 0; i < static_cast<long>(whole); ++i) x += draw_polya_gamma_one(c, rng);
  if (frac > 1e-12) {
    const double s = c * c / (4.0 * kPiSq);
    double series = 0.0;
    double head1 = 0.0;
    double head2 = 0.0;
    for (int k = 1; k <= truncation; ++k) {
      const double d = (k - 0.5) * (k - 0.5) + s;
      series += rng.gamma(frac) / d;
      head1 += 1.0 / d;
      head2 += 1.0 / (d * d);
    }
    // With u = |c|/2: sum_k 1/d_k = pi^2 tanh(u) / (2u) and
    // sum_k 1/d_k^2 = pi^4 (tanh(u) - u sech^2(u)) / (4u^3).
    const double u = 0.5 * std::fabs(c);
    double total1 = kPiSq / 2.0 * (1.0 - u * u / 3.0);
    double total2 = kPiSq * kPiSq / 6.0 * (1.0 - 0.8 * u * u);
    if (u > 1e-3) {
      const double th = std::tanh(u);
      const double sech = 1.0 / std::cosh(u);
      total1 = kPiSq * th / (2.0 * u);
      total2 = kPiSq * kPiSq * (th - u * sech * sech) / (4.0 * u * u * u);
    }
    const double tail1 = total1 - head1;
    const double tail2 = total2 - head2;
    // remainder of the series replaced by a gamma with its exact mean and variance
    if (tail1 > 0.0 && tail2 > 0.0) {
      series += rng.gamma(frac * tail1 * tail1 / tail2) * (tail2 / tail1);
    }
    x += series / (2.0 * kPiSq);
  }
  return x;
}

double draw_truncated_normal(double mean, double var, double lo, double hi, RngStream& rng) {
  if (!(var > 0.0) || !(lo < hi) || std::isnan(mean)) {
    std::ostringstream os;
    os << "degenerate truncated normal: mean=" << mean << " var=" << var << " interval=(" << lo
       << ", " << hi << ")";
    throw NumericError(os.str());
  }
  const double sd = std::sqrt(var);
  const double a = (lo - mean) / sd;
  const double b = (hi - mean) / sd;
  const double x = mean + sd * draw_std_truncated(a, b, rng);
  // Guard against rounding onto the open boundary.
  if (x <= lo) return std::nextafter(lo, hi);
  if (x >= hi) return std::nextafter(hi, lo);
  return x;
}

double draw_inverse_gamma(double shape, double rate, RngStream& rng) {
  if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate)) {
    std::ostringstream os;
    os << "inverse gamma parameters must be positive, got shape=" << shape << " rate=" << rate;
    throw NumericError(os.str());
  }
  return rate / rng.gamma(shape);
}

Eigen::VectorXd precision_gaussian_mean(const PrecisionGaussian& g) {
  Eigen::LLT<Eigen::MatrixXd> llt(g.precision);
  if (llt.info() != Eigen::Success) {
    throw NumericError("precision matrix is not positive definite");
  }
  return llt.solve(g.linear);
}

Eigen::VectorXd draw_mvn_precision(const PrecisionGaussian& g, RngStream& rng) {
  const Eigen::Index n = g.precision.rows();
  if (g.precision.cols() != n || g.linear.size() != n) {
    throw NumericError("precision/linear term dimension mismatch");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(g.precision);
  if (llt.info() != Eigen::Success) {
    const Eigen::VectorXd diag = g.precision.diagonal();
    std::ostringstream os;
    os << "Cholesky factorization failed (non-SPD precision, dim " << n
       << ", min diag " << diag.minCoeff() << ", max diag " << diag.maxCoeff()
       << ", asymmetry " << (g.precision - g.precision.transpose()).cwiseAbs().maxCoeff() << ")";
    throw NumericError(os.str());
  }
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
  Eigen::VectorXd x = llt.solve(g.linear);
  x += llt.matrixU().solve(z);
  return x;
}

}  // namespace tulm
