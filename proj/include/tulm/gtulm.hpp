#pragma once

#include <Eigen/Dense>

#include "tulm/model.hpp"
#include "tulm/rng.hpp"
#include "tulm/survey_data.hpp"

namespace tulm {

struct GtulmState {
  Eigen::VectorXd beta;
  Eigen::MatrixXd eta;  // T x m
  double rho = 0.0;
  double phi = 0.0;
  double sigma2 = 1.0;
  double sigma2_eta1 = 1.0;
  double sigma2_eta = 1.0;

  // beta = 0, eta = 0, rho = phi = 0, variances = 1.
  static GtulmState initial(int p, int m, int T);
};

enum class GtulmParam { kRho, kPhi, kSigma2, kSigma2Eta1, kSigma2Eta };

const char* to_string(GtulmParam p);

// Metropolis-within-Gibbs sampler for the Gaussian time-dependent unit-level
// model. Follow-up responses enter through
//   y_it | y_i(t-1) ~ N(mu_it + rho (y_i(t-1) - mu_i(t-1)), sigma2 (1 - rho^2))^w_it
// and first-time responses through N(mu_it, sigma2)^w_it, with
// mu_it = x_i' beta + eta_t[area(i)].
class GtulmSampler {
 public:
  GtulmSampler(const PanelDataset& data, const SamplerConfig& config);
  GtulmSampler(PanelDesign design, const SamplerConfig& config);

  const GtulmState& state() const { return state_; }
  void set_state(const GtulmState& s);
  const PanelDesign& design() const { return design_; }
  const SamplerConfig& config() const { return config_; }

  // One sweep in order: beta, eta_1, eta_2..eta_{T-1}, eta_T, rho, phi,
  // sigma2, sigma2_eta1, sigma2_eta.
  void sweep(RngStream& rng);

  void step_beta(RngStream& rng);
  void step_eta(int t, RngStream& rng);
  // Returns true when the proposal was accepted.
  bool step_rho(RngStream& rng);
  void step_phi(RngStream& rng);
  void step_sigma2(RngStream& rng);
  void step_sigma2_eta1(RngStream& rng);
  void step_sigma2_eta(RngStream& rng);

  // Conditionals of the blocks, exposed for validation.
  PrecisionGaussian beta_conditional() const;
  // Per-area precision and linear term of eta_t.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> eta_conditional(int t) const;
  std::pair<double, double> sigma2_conditional() const;  // IG (shape, rate)

  // log p(rho | rest) from follow-up sufficient statistics; -inf outside (-1, 1).
  double rho_log_conditional(double rho) const;

 private:
  void refresh_xb();

  PanelDesign design_;
  SamplerConfig config_;
  GtulmState state_;
  Eigen::VectorXd xb_;
};

PosteriorDraws run_gtulm(const PanelDataset& data, const SamplerConfig& config, RngStream& rng);

// Log pseudo-posterior of the full G-TULM, evaluated directly from the joint.
double gtulm_log_pseudo_posterior(const GtulmState& state, const PanelDesign& design,
                                  const SamplerConfig& config);

// Unnormalized log full conditional of a scalar parameter: the joint log
// pseudo-posterior with `param` set to `value`. -inf outside the support.
double gtulm_full_conditional_logdensity(GtulmParam param, double value, const GtulmState& state,
                                         const PanelDesign& design, const SamplerConfig& config);

struct RhoStepResult {
  double rho;
  bool accepted;
};

// Uniform random-walk proposal on (rho - h, rho + h); symmetric, so the
// acceptance ratio is the conditional density ratio.
RhoStepResult metropolis_rho_step(const GtulmState& state, const PanelDesign& design,
                                  const SamplerConfig& config, RngStream& rng);

// Log-likelihood of one follow-up record given rho; with rho = 0 it equals the
// first-time form N(y | mu, sigma2)^w.
double gtulm_record_loglik(const GtulmState& state, const PanelDesign& design, int record);

}  // namespace tulm
