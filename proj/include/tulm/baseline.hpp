#pragma once

#include <iosfwd>
#include <vector>

#include "tulm/model.hpp"
#include "tulm/rng.hpp"
#include "tulm/survey_data.hpp"

namespace tulm {

enum class DirectVariant {
  kHorvitzThompson,  // known domain size N_jt
  kHajek,            // N_jt replaced by the sum of design weights
};

const char* to_string(DirectVariant v);

struct DirectEstimate {
  int area = 0;
  int week = 0;
  double point = 0.0;
  double se = 0.0;
  int n_responses = 0;
  bool defined = false;
  DirectVariant variant = DirectVariant::kHorvitzThompson;
};

// Weighted domain means with design weights w = 1 / pi.
//   HT:    ybar = sum w y / N,       v = sum w (w - 1) y^2 / N^2
//   Hajek: ybar = sum w y / sum w,   v = sum w (w - 1) (y - ybar_H)^2 / (sum w)^2
// where ybar_H is the Hajek mean. Both are Poisson-sampling variance
// estimators (the Hajek one linearized); a census (w = 1) has v = 0.
// `domain_sizes` is week-major [week * m + area]; NaN or an empty vector
// selects the Hajek variant for that domain. Rows are emitted week-major for
// every (area, week); empty domains have defined = false.
std::vector<DirectEstimate> direct_estimate(const PanelDataset& data,
                                            const std::vector<double>& domain_sizes,
                                            const DomainFilter& filter = {});
// Domain sizes taken from the (filtered) cell counts.
std::vector<DirectEstimate> direct_estimate(const PanelDataset& data, const PopulationCells& cells,
                                            const DomainFilter& filter = {});

// Records of week `t` as a one-week dataset: every record first-time, weights
// kept, previous-status columns removed when `drop_prev` is set.
PanelDataset week_subset(const PanelDataset& data, int week, bool drop_prev = true);

// Cross-sectional baselines fit separately to each week with the T = 1 form of
// the longitudinal samplers. Every week's chain starts from the same copy of
// `rng`, so identical weekly data yield identical draws. Returned draws cover
// one week each (first_week = t); weeks without data yield empty draws.
std::vector<PosteriorDraws> run_gbulm_per_week(const PanelDataset& data,
                                               const SamplerConfig& config, const RngStream& rng,
                                               int threads = 1);
std::vector<PosteriorDraws> run_bbulm_per_week(const PanelDataset& data,
                                               const SamplerConfig& config, const RngStream& rng,
                                               int threads = 1);

void write_direct_estimates(const std::vector<DirectEstimate>& est, std::ostream& out,
                            double alpha = 0.05, char delimiter = ',');

// Two-sided normal quantile z_{1 - alpha / 2}.
double normal_critical_value(double alpha);

}  // namespace tulm
