#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tulm/rng.hpp"
#include "tulm/survey_data.hpp"

namespace tulm::testing {

// Small panel simulated straight from the longitudinal model, independent of
// the library's population generator. Covariates: intercept and x ~ N(0, 1).
struct SimSpec {
  ResponseMode mode = ResponseMode::kGaussian;
  int m = 3;
  int T = 3;
  int units_per_area_week = 4;  // new units entering each (area, week)
  std::vector<double> beta = {0.5, 1.0};
  double rho = 0.6;
  double phi = 0.8;
  double sigma2 = 1.0;
  double sigma2_eta1 = 0.5;
  double sigma2_eta = 0.2;
  double prev_no = 0.0;
  double prev_yes = 0.0;
  bool unit_weights = true;
  double followup_prob = 0.6;  // chance a unit answers again next week
};

struct SimTruth {
  std::vector<std::vector<double>> eta;  // [t][j]
};

inline PanelDataset simulate_panel(const SimSpec& s, RngStream& rng, SimTruth* truth = nullptr) {
  std::vector<std::vector<double>> eta(s.T, std::vector<double>(s.m));
  for (int j = 0; j < s.m; ++j) eta[0][j] = std::sqrt(s.sigma2_eta1) * rng.normal();
  for (int t = 1; t < s.T; ++t)
    for (int j = 0; j < s.m; ++j) eta[t][j] = s.phi * eta[t - 1][j] + std::sqrt(s.sigma2_eta) * rng.normal();
  if (truth) truth->eta = eta;

  PanelDataset d;
  d.mode = s.mode;
  d.n_areas = s.m;
  d.n_weeks = s.T;
  d.covariate_names = {kInterceptName, "x"};
  int uid = 0;
  for (int t0 = 0; t0 < s.T; ++t0) {
    for (int j = 0; j < s.m; ++j) {
      for (int u = 0; u < s.units_per_area_week; ++u) {
        const std::string id = "u" + std::to_string(uid++);
        const double x = rng.normal();
        const double w = s.unit_weights ? 1.0 : std::exp(0.5 * rng.normal()) * 10.0;
        double prev_y = 0.0, prev_mu = 0.0;
        for (int t = t0; t < s.T && t < t0 + 3; ++t) {
          if (t > t0 && rng.uniform() > s.followup_prob) break;
          const double mu = s.beta[0] + s.beta[1] * x + eta[t][j];
          UnitWeekRecord r;
          r.unit_id = id;
          r.area = j;
          r.week = t;
          r.design_weight = w;
          r.covariates = {1.0, x};
          if (s.mode == ResponseMode::kGaussian) {
            if (t == t0) {
              r.response = mu + std::sqrt(s.sigma2) * rng.normal();
            } else {
              r.response = mu + s.rho * (prev_y - prev_mu) +
                           std::sqrt(s.sigma2 * (1 - s.rho * s.rho)) * rng.normal();
            }
          } else {
            double lin = mu;
            if (t > t0) lin += prev_y > 0.5 ? s.prev_yes : s.prev_no;
            r.response = rng.uniform() < 1.0 / (1.0 + std::exp(-lin)) ? 1.0 : 0.0;
          }
          prev_y = r.response;
          prev_mu = mu;
          d.records.push_back(r);
        }
      }
    }
  }
  build_partitions(d);
  d = scale_weights(d);
  if (s.mode == ResponseMode::kBinary && (s.prev_no != 0.0 || s.prev_yes != 0.0)) {
    d = build_prev_covariate(d);
  }
  return d;
}

}  // namespace tulm::testing
