#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tulm/rng.hpp"
#include "tulm/survey_data.hpp"

namespace tulm {

// Run lengths and prior hyperparameters shared by all unit-level samplers.
struct SamplerConfig {
  int n_iter = 2000;
  int n_burn = 500;
  int thin = 1;
  double sigma2_beta = 1e4;  // beta ~ N(0, sigma2_beta I)
  double a = 1.0;            // IG(a, b) shape for every variance
  double b = 1.0;            // IG(a, b) rate
  double rho_proposal_halfwidth = 0.05;
  int pg_truncation = kPolyaGammaTruncation;

  static SamplerConfig gaussian_defaults();  // 2000 iterations, 500 burn-in
  static SamplerConfig binary_defaults();    // 8000 iterations, 1000 burn-in

  void validate() const;  // throws ConfigError
  int retained() const { return (n_iter - n_burn + thin - 1) / thin; }
};

using GtulmConfig = SamplerConfig;
using BtulmConfig = SamplerConfig;

// Retained post-burn-in draws of one chain. `eta` rows are draws, columns are
// (week, area) in week-major order over weeks [first_week, first_week + n_weeks).
struct PosteriorDraws {
  ResponseMode mode = ResponseMode::kGaussian;
  int n_areas = 0;
  int n_weeks = 0;
  int first_week = 0;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd beta;  // draws x p
  Eigen::MatrixXd eta;   // draws x (n_weeks * n_areas)
  Eigen::VectorXd rho;   // Gaussian only
  Eigen::VectorXd phi;
  Eigen::VectorXd sigma2;  // Gaussian only
  Eigen::VectorXd sigma2_eta1;
  Eigen::VectorXd sigma2_eta;
  double rho_acceptance = 0.0;  // Gaussian only
  Eigen::VectorXd omega_mean;   // binary only: posterior mean of each latent omega

  int size() const { return static_cast<int>(beta.rows()); }
  int p() const { return static_cast<int>(beta.cols()); }
  double eta_at(int draw, int week, int area) const {
    return eta(draw, static_cast<Eigen::Index>(week - first_week) * n_areas + area);
  }
  bool covers_week(int week) const { return week >= first_week && week < first_week + n_weeks; }
};

// Columnar draw output: one row per retained iteration.
void write_draws(const PosteriorDraws& draws, std::ostream& out, char delimiter = ',');
PosteriorDraws read_draws(std::istream& in, ResponseMode mode, int n_areas,
                          const std::string& source = "<stream>");

// Dense arrays derived from a weight-scaled PanelDataset.
struct PanelDesign {
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  int n = 0;
  int p = 0;
  int m = 0;
  int T = 0;
  Eigen::VectorXd y;
  Eigen::VectorXd w;  // scaled weights
  Eigen::VectorXd trials;
  RowMatrix X;
  std::vector<int> area;
  std::vector<int> week;
  std::vector<int> prev;  // predecessor record, -1 for first-time
  std::vector<std::vector<int>> by_week;
  // follow-up records whose predecessor lies in week t
  std::vector<std::vector<int>> followups_from;
  double total_weight = 0.0;
  double followup_weight = 0.0;

  static PanelDesign from(const PanelDataset& data);
};

// AR(1) area effects: eta_1 ~ N(0, s1 I), eta_t | eta_{t-1} ~ N(phi eta_{t-1}, s I).
namespace area_effects {

// Prior precision (scalar, same for every area) and linear term for eta_t.
double prior_precision(int t, int T, double phi, double sigma2_eta1, double sigma2_eta);
Eigen::VectorXd prior_linear(int t, const Eigen::MatrixXd& eta, double phi, double sigma2_eta);

// Truncated-normal conditional of phi; mean sum eta_t'eta_{t-1} / sum eta_{t-1}'eta_{t-1}.
// Uniform on (-1, 1) when the denominator vanishes (T = 1).
struct PhiConditional {
  double mean = 0.0;
  double var = 0.0;
  bool flat = true;
};
PhiConditional phi_conditional(const Eigen::MatrixXd& eta, double sigma2_eta);
double draw_phi(const Eigen::MatrixXd& eta, double sigma2_eta, RngStream& rng);
double draw_sigma2_eta1(const Eigen::MatrixXd& eta, double a, double b, RngStream& rng);
double draw_sigma2_eta(const Eigen::MatrixXd& eta, double phi, double a, double b,
                       RngStream& rng);

// log p(eta | phi, s1, s) + log p(phi) + log p(s1) + log p(s), up to constants.
double log_prior(const Eigen::MatrixXd& eta, double phi, double sigma2_eta1, double sigma2_eta,
                 double a, double b);

}  // namespace area_effects

double log_inverse_gamma_density(double x, double a, double b);

}  // namespace tulm
