#pragma once

#include <Eigen/Dense>

#include "tulm/model.hpp"
#include "tulm/rng.hpp"
#include "tulm/survey_data.hpp"

namespace tulm {

struct BtulmState {
  Eigen::VectorXd beta;  // includes previous-status coefficients when present
  Eigen::MatrixXd eta;   // T x m
  double phi = 0.0;
  double sigma2_eta1 = 1.0;
  double sigma2_eta = 1.0;
  Eigen::VectorXd omega;  // latent Polya-Gamma variables, one per record

  static BtulmState initial(int n, int p, int m, int T);
};

enum class BtulmParam { kPhi, kSigma2Eta1, kSigma2Eta };

const char* to_string(BtulmParam p);

// Gibbs sampler for the binomial time-dependent unit-level model via
// Polya-Gamma augmentation: omega_it ~ PG(w_it n_it, lambda_it) with
// lambda_it = x_i' beta + eta_t[area(i)], after which beta and eta have
// Gaussian conditionals with pseudo-observations kappa_it / omega_it,
// kappa_it = w_it (y_it - n_it / 2).
class BtulmSampler {
 public:
  BtulmSampler(const PanelDataset& data, const SamplerConfig& config);
  BtulmSampler(PanelDesign design, const SamplerConfig& config);

  const BtulmState& state() const { return state_; }
  void set_state(const BtulmState& s);
  const PanelDesign& design() const { return design_; }
  const Eigen::VectorXd& kappa() const { return kappa_; }

  // One sweep: omega, eta_1, eta_2..eta_{T-1}, eta_T, beta, phi, sigma2_eta1, sigma2_eta.
  void sweep(RngStream& rng);

  void step_omega(RngStream& rng);
  void step_eta(int t, RngStream& rng);
  void step_beta(RngStream& rng);
  void step_phi(RngStream& rng);
  void step_sigma2_eta1(RngStream& rng);
  void step_sigma2_eta(RngStream& rng);

  PrecisionGaussian beta_conditional() const;
  std::pair<Eigen::VectorXd, Eigen::VectorXd> eta_conditional(int t) const;
  double linear_predictor(int record) const;

 private:
  void refresh_xb();

  PanelDesign design_;
  SamplerConfig config_;
  BtulmState state_;
  Eigen::VectorXd kappa_;
  Eigen::VectorXd shape_;  // w_it n_it
  Eigen::VectorXd xb_;
};

PosteriorDraws run_btulm(const PanelDataset& data, const SamplerConfig& config, RngStream& rng);

// Log pseudo-posterior of (beta, eta, phi, sigma2_eta1, sigma2_eta) with
// omega integrated out.
double btulm_log_pseudo_posterior(const BtulmState& state, const PanelDesign& design,
                                  const SamplerConfig& config);

double btulm_full_conditional_logdensity(BtulmParam param, double value, const BtulmState& state,
                                         const PanelDesign& design, const SamplerConfig& config);

struct IdentitySides {
  double lhs;     // w [y lambda - n log(1 + e^lambda)]
  double rhs;     // log 2^{-b} e^{kappa lambda} E[exp(-omega lambda^2 / 2)], omega ~ PG(b, 0)
  double rhs_se;  // delta-method Monte Carlo standard error of rhs
};

// Both sides of the Polya-Gamma integral identity with a = y w, b = n w.
IdentitySides pg_loglik_identity_check(double y, double n, double w, double lambda,
                                       int n_draws, RngStream& rng);

}  // namespace tulm
