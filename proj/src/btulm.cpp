#include "tulm/btulm.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "tulm/error.hpp"

namespace tulm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(1 + e^x) without overflow.
double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void check_state(const BtulmState& s, int iteration) {
  const bool ok = s.beta.allFinite() && s.eta.allFinite() && std::isfinite(s.phi) &&
                  std::isfinite(s.sigma2_eta1) && std::isfinite(s.sigma2_eta) &&
                  s.omega.allFinite();
  if (!ok) {
    std::ostringstream os;
    os << "B-TULM state became non-finite at iteration " << iteration << " (phi=" << s.phi
       << ", sigma2_eta1=" << s.sigma2_eta1 << ", sigma2_eta=" << s.sigma2_eta << ")";
    throw NumericError(os.str());
  }
}

}  // namespace

BtulmState BtulmState::initial(int n, int p, int m, int T) {
  BtulmState s;
  s.beta = Eigen::VectorXd::Zero(p);
  s.eta = Eigen::MatrixXd::Zero(T, m);
  s.omega = Eigen::VectorXd::Constant(n, 0.25);
  return s;
}

const char* to_string(BtulmParam p) {
  switch (p) {
    case BtulmParam::kPhi: return "phi";
    case BtulmParam::kSigma2Eta1: return "sigma2_eta1";
    case BtulmParam::kSigma2Eta: return "sigma2_eta";
  }
  return "?";
}

BtulmSampler::BtulmSampler(const PanelDataset& data, const SamplerConfig& config)
    : BtulmSampler(PanelDesign::from(data), config) {
  if (data.mode != ResponseMode::kBinary) throw DataError("B-TULM requires binary mode data");
}

BtulmSampler::BtulmSampler(PanelDesign design, const SamplerConfig& config)
    : design_(std::move(design)), config_(config) {
  config_.validate();
  const auto& d = design_;
  kappa_.resize(d.n);
  shape_.resize(d.n);
  for (int r = 0; r < d.n; ++r) {
    shape_[r] = d.w[r] * d.trials[r];
    if (!(shape_[r] > 0.0)) {
      std::ostringstream os;
      os << "record " << r << " has nonpositive Polya-Gamma shape w*n = " << shape_[r];
      throw DataError(os.str());
    }
    kappa_[r] = d.w[r] * (d.y[r] - 0.5 * d.trials[r]);
  }
  state_ = BtulmState::initial(d.n, d.p, d.m, d.T);
  refresh_xb();
}

void BtulmSampler::set_state(const BtulmState& s) {
  state_ = s;
  refresh_xb();
}

void BtulmSampler::refresh_xb() { xb_ = design_.X * state_.beta; }

double BtulmSampler::linear_predictor(int r) const {
  return xb_[r] + state_.eta(design_.week[r], design_.area[r]);
}

void BtulmSampler::step_omega(RngStream& rng) {
  for (int r = 0; r < design_.n; ++r) {
    state_.omega[r] = draw_polya_gamma(shape_[r], linear_predictor(r), rng, config_.pg_truncation);
  }
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> BtulmSampler::eta_conditional(int t) const {
  const auto& d = design_;
  const auto& s = state_;
  Eigen::VectorXd q = Eigen::VectorXd::Constant(
      d.m, area_effects::prior_precision(t, d.T, s.phi, s.sigma2_eta1, s.sigma2_eta));
  Eigen::VectorXd h = area_effects::prior_linear(t, s.eta, s.phi, s.sigma2_eta);
  for (int r : d.by_week[t]) {
    const int j = d.area[r];
    q[j] += s.omega[r];
    h[j] += kappa_[r] - s.omega[r] * xb_[r];
  }
  return {q, h};
}

void BtulmSampler::step_eta(int t, RngStream& rng) {
  const auto [q, h] = eta_conditional(t);
  for (int j = 0; j < design_.m; ++j) {
    state_.eta(t, j) = h[j] / q[j] + rng.normal() / std::sqrt(q[j]);
  }
}

PrecisionGaussian BtulmSampler::beta_conditional() const {
  const auto& d = design_;
  const auto& s = state_;
  Eigen::VectorXd resid(d.n);
  for (int r = 0; r < d.n; ++r) resid[r] = kappa_[r] - s.omega[r] * s.eta(d.week[r], d.area[r]);
  PrecisionGaussian g;
  const Eigen::MatrixXd Xw = d.X.array().colwise() * s.omega.array().sqrt();
  g.precision = Xw.transpose() * Xw;
  g.precision.diagonal().array() += 1.0 / config_.sigma2_beta;
  g.linear = d.X.transpose() * resid;
  return g;
}

void BtulmSampler::step_beta(RngStream& rng) {
  state_.beta = draw_mvn_precision(beta_conditional(), rng);
  refresh_xb();
}

void BtulmSampler::step_phi(RngStream& rng) {
  state_.phi = area_effects::draw_phi(state_.eta, state_.sigma2_eta, rng);
}

void BtulmSampler::step_sigma2_eta1(RngStream& rng) {
  state_.sigma2_eta1 = area_effects::draw_sigma2_eta1(state_.eta, config_.a, config_.b, rng);
}

void BtulmSampler::step_sigma2_eta(RngStream& rng) {
  state_.sigma2_eta =
      area_effects::draw_sigma2_eta(state_.eta, state_.phi, config_.a, config_.b, rng);
}

void BtulmSampler::sweep(RngStream& rng) {
  step_omega(rng);
  for (int t = 0; t < design_.T; ++t) step_eta(t, rng);
  step_beta(rng);
  step_phi(rng);
  step_sigma2_eta1(rng);
  step_sigma2_eta(rng);
}

PosteriorDraws run_btulm(const PanelDataset& data, const SamplerConfig& config, RngStream& rng) {
  BtulmSampler sampler(data, config);
  const auto& d = sampler.design();
  const int keep = config.retained();
  PosteriorDraws out;
  out.mode = ResponseMode::kBinary;
  out.n_areas = d.m;
  out.n_weeks = d.T;
  out.covariate_names = data.covariate_names;
  out.beta.resize(keep, d.p);
  out.eta.resize(keep, static_cast<Eigen::Index>(d.T) * d.m);
  out.phi.resize(keep);
  out.sigma2_eta1.resize(keep);
  out.sigma2_eta.resize(keep);
  out.omega_mean = Eigen::VectorXd::Zero(d.n);

  int k = 0;
  for (int iter = 0; iter < config.n_iter; ++iter) {
    sampler.sweep(rng);
    const BtulmState& s = sampler.state();
    check_state(s, iter + 1);
    if (iter >= config.n_burn && (iter - config.n_burn) % config.thin == 0) {
      out.beta.row(k) = s.beta.transpose();
      for (int t = 0; t < d.T; ++t) out.eta.block(k, static_cast<Eigen::Index>(t) * d.m, 1, d.m) = s.eta.row(t);
      out.phi[k] = s.phi;
      out.sigma2_eta1[k] = s.sigma2_eta1;
      out.sigma2_eta[k] = s.sigma2_eta;
      out.omega_mean += s.omega;
      ++k;
    }
  }
  if (k > 0) out.omega_mean /= k;
  return out;
}

double btulm_log_pseudo_posterior(const BtulmState& s, const PanelDesign& d,
                                  const SamplerConfig& config) {
  const double prior_eta =
      area_effects::log_prior(s.eta, s.phi, s.sigma2_eta1, s.sigma2_eta, config.a, config.b);
  if (!std::isfinite(prior_eta)) return kNegInf;
  double lp = 0.0;
  for (int r = 0; r < d.n; ++r) {
    const double lambda = d.X.row(r).dot(s.beta) + s.eta(d.week[r], d.area[r]);
    lp += d.w[r] * (d.y[r] * lambda - d.trials[r] * log1p_exp(lambda));
  }
  lp += -0.5 * s.beta.squaredNorm() / config.sigma2_beta;
  return lp + prior_eta;
}

double btulm_full_conditional_logdensity(BtulmParam param, double value, const BtulmState& state,
                                         const PanelDesign& design, const SamplerConfig& config) {
  BtulmState s = state;
  switch (param) {
    case BtulmParam::kPhi: s.phi = value; break;
    case BtulmParam::kSigma2Eta1: s.sigma2_eta1 = value; break;
    case BtulmParam::kSigma2Eta: s.sigma2_eta = value; break;
  }
  return btulm_log_pseudo_posterior(s, design, config);
}

IdentitySides pg_loglik_identity_check(double y, double n, double w, double lambda, int n_draws,
                                       RngStream& rng) {
  if (n_draws < 2) throw ConfigError("identity check needs at least two draws");
  const double a = y * w;
  const double b = n * w;
  const double kappa = a - b / 2.0;
  IdentitySides out;
  out.lhs = w * (y * lambda - n * log1p_exp(lambda));
  // Monte Carlo estimate of E[exp(-omega lambda^2 / 2)].
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n_draws; ++i) {
    const double v = std::exp(-0.5 * draw_polya_gamma(b, 0.0, rng) * lambda * lambda);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n_draws;
  const double var = std::max(0.0, (sum_sq / n_draws - mean * mean) * n_draws / (n_draws - 1.0));
  out.rhs = -b * std::log(2.0) + kappa * lambda + std::log(mean);
  out.rhs_se = std::sqrt(var / n_draws) / mean;
  return out;
}

}  // namespace tulm
