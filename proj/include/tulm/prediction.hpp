#pragma once

#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "tulm/model.hpp"
#include "tulm/rng.hpp"
#include "tulm/survey_data.hpp"

namespace tulm {

struct DomainEstimate {
  int area = -1;
  int week = -1;
  double point = 0.0;  // posterior mean
  double sd = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  int n_draws = 0;
};

// Empirical quantile with linear interpolation between order statistics:
// h = (n - 1) q, x_(floor h) + (h - floor h) (x_(floor h + 1) - x_(floor h)).
// `sorted` must be in ascending order.
double empirical_quantile(const std::vector<double>& sorted, double q);

// Mean, SD (n - 1 denominator) and the (alpha/2, 1 - alpha/2) quantiles.
DomainEstimate summarize_draws(const std::vector<double>& values, double alpha);

struct PredictionOptions {
  double alpha = 0.05;
  DomainFilter filter;  // restricts aggregation to matching cells
  int threads = 1;
};

// Posterior predictive domain means for every (area, week).
struct DomainPrediction {
  int n_areas = 0;
  int n_weeks = 0;
  std::vector<DomainEstimate> estimates;  // week-major; n_draws = 0 where no cells
  Eigen::MatrixXd per_draw;               // draws x (n_weeks * n_areas), NaN where no cells

  const DomainEstimate& at(int area, int week) const {
    return estimates[static_cast<std::size_t>(week) * n_areas + area];
  }
};

// `draws` holds one chain covering all weeks (TULM) or one chain per week
// (BULM); all must retain the same number of draws, and draw k of every chain
// is used together. Each draw k uses the substream rng.split(k).
//
// Gaussian: a cell of count c and mean mu contributes a total drawn from
// N(c mu, c sigma2), the exact law of a sum of c iid unit predictions.
DomainPrediction predict_gaussian_domains(const std::vector<PosteriorDraws>& draws,
                                          const PopulationCells& cells, const RngStream& rng,
                                          const PredictionOptions& options = {});

// Binary: cell counts are rounded stochastically to integers n_c (unbiased),
// and yes-counts are drawn Binomial(n_c, xi_c). When the draws carry
// previous-status coefficients, cells with a fixed prev_status use it; the
// remaining cells are NotSampled in their first week and afterwards are split
// into prev-yes / prev-no sub-counts by carrying forward the same draw's
// yes-count of the matching (area, covariates) cell in the preceding week
// (binomial thinning by the previous yes-fraction when counts differ).
DomainPrediction predict_binary_domains(const std::vector<PosteriorDraws>& draws,
                                        const PopulationCells& cells, const RngStream& rng,
                                        const PredictionOptions& options = {});

void write_domain_estimates(const DomainPrediction& pred, std::ostream& out, char delimiter = ',');
// One row per draw, one column per (week, area) domain.
void write_domain_draws(const DomainPrediction& pred, std::ostream& out, char delimiter = ',');

}  // namespace tulm
