#include "tulm/gtulm.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "tulm/error.hpp"

namespace tulm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;

// Weighted moments of follow-up residual pairs (current, previous).
struct RhoStats {
  double weight = 0.0;  // sum of follow-up weights
  double s_cc = 0.0;    // sum w e_c^2
  double s_cp = 0.0;    // sum w e_c e_p
  double s_pp = 0.0;    // sum w e_p^2
};

double residual(const GtulmState& s, const PanelDesign& d, const Eigen::VectorXd& xb, int r) {
  return d.y[r] - xb[r] - s.eta(d.week[r], d.area[r]);
}

RhoStats rho_stats(const GtulmState& s, const PanelDesign& d, const Eigen::VectorXd& xb) {
  RhoStats st;
  for (int r = 0; r < d.n; ++r) {
    const int pr = d.prev[r];
    if (pr < 0) continue;
    const double ec = residual(s, d, xb, r);
    const double ep = residual(s, d, xb, pr);
    st.weight += d.w[r];
    st.s_cc += d.w[r] * ec * ec;
    st.s_cp += d.w[r] * ec * ep;
    st.s_pp += d.w[r] * ep * ep;
  }
  return st;
}

double rho_log_density(double rho, double sigma2, const RhoStats& st) {
  if (!(rho > -1.0 && rho < 1.0)) return kNegInf;
  const double v = 1.0 - rho * rho;
  const double q = st.s_cc - 2.0 * rho * st.s_cp + rho * rho * st.s_pp;
  return -0.5 * st.weight * std::log(v) - q / (2.0 * sigma2 * v);
}

void check_state(const GtulmState& s, int iteration) {
  const bool ok = s.beta.allFinite() && s.eta.allFinite() && std::isfinite(s.rho) &&
                  std::isfinite(s.phi) && std::isfinite(s.sigma2) && std::isfinite(s.sigma2_eta1) &&
                  std::isfinite(s.sigma2_eta);
  if (!ok) {
    std::ostringstream os;
    os << "G-TULM state became non-finite at iteration " << iteration << " (rho=" << s.rho
       << ", phi=" << s.phi << ", sigma2=" << s.sigma2 << ", sigma2_eta1=" << s.sigma2_eta1
       << ", sigma2_eta=" << s.sigma2_eta << ")";
    throw NumericError(os.str());
  }
}

}  // namespace

GtulmState GtulmState::initial(int p, int m, int T) {
  GtulmState s;
  s.beta = Eigen::VectorXd::Zero(p);
  s.eta = Eigen::MatrixXd::Zero(T, m);
  return s;
}

const char* to_string(GtulmParam p) {
  switch (p) {
    case GtulmParam::kRho: return "rho";
    case GtulmParam::kPhi: return "phi";
    case GtulmParam::kSigma2: return "sigma2";
    case GtulmParam::kSigma2Eta1: return "sigma2_eta1";
    case GtulmParam::kSigma2Eta: return "sigma2_eta";
  }
  return "?";
}

GtulmSampler::GtulmSampler(const PanelDataset& data, const SamplerConfig& config)
    : GtulmSampler(PanelDesign::from(data), config) {
  if (data.mode != ResponseMode::kGaussian) throw DataError("G-TULM requires gaussian mode data");
}

GtulmSampler::GtulmSampler(PanelDesign design, const SamplerConfig& config)
    : design_(std::move(design)), config_(config) {
  config_.validate();
  state_ = GtulmState::initial(design_.p, design_.m, design_.T);
  refresh_xb();
}

void GtulmSampler::set_state(const GtulmState& s) {
  state_ = s;
  refresh_xb();
}

void GtulmSampler::refresh_xb() { xb_ = design_.X * state_.beta; }

PrecisionGaussian GtulmSampler::beta_conditional() const {
  const auto& d = design_;
  const auto& s = state_;
  const double v_first = s.sigma2;
  const double v_follow = s.sigma2 * (1.0 - s.rho * s.rho);
  Eigen::MatrixXd A(d.n, d.p);
  Eigen::VectorXd c(d.n);
  Eigen::VectorXd lambda(d.n);
  for (int r = 0; r < d.n; ++r) {
    const int pr = d.prev[r];
    const double eta_r = s.eta(d.week[r], d.area[r]);
    if (pr < 0) {
      A.row(r) = d.X.row(r);
      c[r] = d.y[r] - eta_r;
      lambda[r] = d.w[r] / v_first;
    } else {
      A.row(r) = d.X.row(r) - s.rho * d.X.row(pr);
      c[r] = (d.y[r] - eta_r) - s.rho * (d.y[pr] - s.eta(d.week[pr], d.area[pr]));
      lambda[r] = d.w[r] / v_follow;
    }
  }
  PrecisionGaussian g;
  const Eigen::MatrixXd Aw = A.array().colwise() * lambda.array().sqrt();
  g.precision = Aw.transpose() * Aw;
  g.precision.diagonal().array() += 1.0 / config_.sigma2_beta;
  g.linear = A.transpose() * (lambda.array() * c.array()).matrix();
  return g;
}

void GtulmSampler::step_beta(RngStream& rng) {
  state_.beta = draw_mvn_precision(beta_conditional(), rng);
  refresh_xb();
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> GtulmSampler::eta_conditional(int t) const {
  const auto& d = design_;
  const auto& s = state_;
  const double rho = s.rho;
  const double inv_first = 1.0 / s.sigma2;
  const double inv_follow = 1.0 / (s.sigma2 * (1.0 - rho * rho));
  Eigen::VectorXd q = Eigen::VectorXd::Constant(
      d.m, area_effects::prior_precision(t, d.T, s.phi, s.sigma2_eta1, s.sigma2_eta));
  Eigen::VectorXd h = area_effects::prior_linear(t, s.eta, s.phi, s.sigma2_eta);

  // Week-t records: residual e = d - eta_t[j].
  for (int r : d.by_week[t]) {
    const int j = d.area[r];
    const int pr = d.prev[r];
    double lam = 0.0;
    double dev = d.y[r] - xb_[r];
    if (pr < 0) {
      lam = d.w[r] * inv_first;
    } else {
      lam = d.w[r] * inv_follow;
      dev -= rho * residual(s, d, xb_, pr);
    }
    q[j] += lam;
    h[j] += lam * dev;
  }
  // Week-(t+1) follow-ups: residual e = d + rho eta_t[j_prev].
  if (t + 1 < d.T) {
    for (int r : d.followups_from[t]) {
      const int pr = d.prev[r];
      const int jp = d.area[pr];
      const double lam = d.w[r] * inv_follow;
      const double dev = residual(s, d, xb_, r) - rho * (d.y[pr] - xb_[pr]);
      q[jp] += lam * rho * rho;
      h[jp] -= lam * rho * dev;
    }
  }
  return {q, h};
}

void GtulmSampler::step_eta(int t, RngStream& rng) {
  const auto [q, h] = eta_conditional(t);
  for (int j = 0; j < design_.m; ++j) {
    state_.eta(t, j) = h[j] / q[j] + rng.normal() / std::sqrt(q[j]);
  }
}

double GtulmSampler::rho_log_conditional(double rho) const {
  return rho_log_density(rho, state_.sigma2, rho_stats(state_, design_, xb_));
}

bool GtulmSampler::step_rho(RngStream& rng) {
  const RhoStats st = rho_stats(state_, design_, xb_);
  const double h = config_.rho_proposal_halfwidth;
  const double proposal = state_.rho - h + 2.0 * h * rng.uniform();
  const double log_ratio = rho_log_density(proposal, state_.sigma2, st) -
                           rho_log_density(state_.rho, state_.sigma2, st);
  if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) {
    state_.rho = proposal;
    return true;
  }
  return false;
}

void GtulmSampler::step_phi(RngStream& rng) {
  state_.phi = area_effects::draw_phi(state_.eta, state_.sigma2_eta, rng);
}

std::pair<double, double> GtulmSampler::sigma2_conditional() const {
  const auto& d = design_;
  const auto& s = state_;
  const double inv_follow = 1.0 / (1.0 - s.rho * s.rho);
  double ss = 0.0;
  for (int r = 0; r < d.n; ++r) {
    const int pr = d.prev[r];
    double e = residual(s, d, xb_, r);
    if (pr < 0) {
      ss += d.w[r] * e * e;
    } else {
      e -= s.rho * residual(s, d, xb_, pr);
      ss += d.w[r] * e * e * inv_follow;
    }
  }
  return {config_.a + 0.5 * d.total_weight, config_.b + 0.5 * ss};
}

void GtulmSampler::step_sigma2(RngStream& rng) {
  const auto [shape, rate] = sigma2_conditional();
  state_.sigma2 = draw_inverse_gamma(shape, rate, rng);
}

void GtulmSampler::step_sigma2_eta1(RngStream& rng) {
  state_.sigma2_eta1 = area_effects::draw_sigma2_eta1(state_.eta, config_.a, config_.b, rng);
}

void GtulmSampler::step_sigma2_eta(RngStream& rng) {
  state_.sigma2_eta =
      area_effects::draw_sigma2_eta(state_.eta, state_.phi, config_.a, config_.b, rng);
}

void GtulmSampler::sweep(RngStream& rng) {
  step_beta(rng);
  for (int t = 0; t < design_.T; ++t) step_eta(t, rng);
  step_rho(rng);
  step_phi(rng);
  step_sigma2(rng);
  step_sigma2_eta1(rng);
  step_sigma2_eta(rng);
}

PosteriorDraws run_gtulm(const PanelDataset& data, const SamplerConfig& config, RngStream& rng) {
  GtulmSampler sampler(data, config);
  const auto& d = sampler.design();
  const int keep = config.retained();
  PosteriorDraws out;
  out.mode = ResponseMode::kGaussian;
  out.n_areas = d.m;
  out.n_weeks = d.T;
  out.covariate_names = data.covariate_names;
  out.beta.resize(keep, d.p);
  out.eta.resize(keep, static_cast<Eigen::Index>(d.T) * d.m);
  out.rho.resize(keep);
  out.phi.resize(keep);
  out.sigma2.resize(keep);
  out.sigma2_eta1.resize(keep);
  out.sigma2_eta.resize(keep);

  long accepted = 0;
  int k = 0;
  for (int iter = 0; iter < config.n_iter; ++iter) {
    sampler.step_beta(rng);
    for (int t = 0; t < d.T; ++t) sampler.step_eta(t, rng);
    accepted += sampler.step_rho(rng) ? 1 : 0;
    sampler.step_phi(rng);
    sampler.step_sigma2(rng);
    sampler.step_sigma2_eta1(rng);
    sampler.step_sigma2_eta(rng);
    const GtulmState& s = sampler.state();
    check_state(s, iter + 1);
    if (iter >= config.n_burn && (iter - config.n_burn) % config.thin == 0) {
      out.beta.row(k) = s.beta.transpose();
      for (int t = 0; t < d.T; ++t) out.eta.block(k, static_cast<Eigen::Index>(t) * d.m, 1, d.m) = s.eta.row(t);
      out.rho[k] = s.rho;
      out.phi[k] = s.phi;
      out.sigma2[k] = s.sigma2;
      out.sigma2_eta1[k] = s.sigma2_eta1;
      out.sigma2_eta[k] = s.sigma2_eta;
      ++k;
    }
  }
  out.rho_acceptance = static_cast<double>(accepted) / config.n_iter;
  return out;
}

double gtulm_record_loglik(const GtulmState& s, const PanelDesign& d, int r) {
  const Eigen::VectorXd xb_r = d.X.row(r) * s.beta;
  const double mu = xb_r[0] + s.eta(d.week[r], d.area[r]);
  const int pr = d.prev[r];
  double mean = mu;
  double var = s.sigma2;
  if (pr >= 0) {
    const double mu_p = d.X.row(pr).dot(s.beta) + s.eta(d.week[pr], d.area[pr]);
    mean += s.rho * (d.y[pr] - mu_p);
    var *= 1.0 - s.rho * s.rho;
  }
  const double e = d.y[r] - mean;
  return d.w[r] * (-0.5 * (kLog2Pi + std::log(var)) - e * e / (2.0 * var));
}

double gtulm_log_pseudo_posterior(const GtulmState& s, const PanelDesign& d,
                                  const SamplerConfig& config) {
  if (!(s.rho > -1.0 && s.rho < 1.0) || !(s.sigma2 > 0.0)) return kNegInf;
  const double prior_eta =
      area_effects::log_prior(s.eta, s.phi, s.sigma2_eta1, s.sigma2_eta, config.a, config.b);
  if (!std::isfinite(prior_eta)) return kNegInf;
  double lp = 0.0;
  for (int r = 0; r < d.n; ++r) lp += gtulm_record_loglik(s, d, r);
  lp += -0.5 * s.beta.squaredNorm() / config.sigma2_beta;
  lp += prior_eta;
  lp += log_inverse_gamma_density(s.sigma2, config.a, config.b);
  return lp;
}

double gtulm_full_conditional_logdensity(GtulmParam param, double value, const GtulmState& state,
                                         const PanelDesign& design, const SamplerConfig& config) {
  GtulmState s = state;
  switch (param) {
    case GtulmParam::kRho: s.rho = value; break;
    case GtulmParam::kPhi: s.phi = value; break;
    case GtulmParam::kSigma2: s.sigma2 = value; break;
    case GtulmParam::kSigma2Eta1: s.sigma2_eta1 = value; break;
    case GtulmParam::kSigma2Eta: s.sigma2_eta = value; break;
  }
  return gtulm_log_pseudo_posterior(s, design, config);
}

RhoStepResult metropolis_rho_step(const GtulmState& state, const PanelDesign& design,
                                  const SamplerConfig& config, RngStream& rng) {
  const Eigen::VectorXd xb = design.X * state.beta;
  const RhoStats st = rho_stats(state, design, xb);
  const double h = config.rho_proposal_halfwidth;
  const double proposal = state.rho - h + 2.0 * h * rng.uniform();
  const double log_ratio =
      rho_log_density(proposal, state.sigma2, st) - rho_log_density(state.rho, state.sigma2, st);
  if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) return {proposal, true};
  return {state.rho, false};
}

}  // namespace tulm
