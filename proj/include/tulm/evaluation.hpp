#pragma once

#include <array>
#include <atomic>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tulm/model.hpp"
#include "tulm/rng.hpp"
#include "tulm/survey_data.hpp"

namespace tulm {

// (y^lambda - 1) / lambda, or log y at lambda = 0. Throws DataError for y <= 0.
double box_cox(double value, double lambda);
std::vector<double> box_cox(const std::vector<double>& values, double lambda);
double inverse_box_cox(double z, double lambda);

// S_alpha(l, u; x) = (u - l) + 2/alpha (l - x) 1{x < l} + 2/alpha (x - u) 1{x > u}.
double interval_score(double lo, double hi, double x, double alpha);

struct PopulationUnit {
  std::string id;
  int area = 0;
  std::vector<double> covariates;  // design row without previous-status columns
  int first_week = 0;
  std::vector<double> responses;  // consecutive weeks first_week, first_week + 1, ...
  double trials = 1.0;
  double original_weight = 1.0;  // w*_i, weight attached to the first response

  int n_observed() const { return static_cast<int>(responses.size()); }
  int last_week() const { return first_week + n_observed() - 1; }
  bool observed_at(int week) const { return week >= first_week && week <= last_week(); }
  double response_at(int week) const { return responses[week - first_week]; }
  double mean_response() const;
};

// Finite population of respondents; truth is the mean response of the units
// observed in each (area, week).
struct SyntheticPopulation {
  ResponseMode mode = ResponseMode::kGaussian;
  int n_areas = 0;
  int n_weeks = 0;
  std::vector<std::string> covariate_names;
  std::vector<PopulationUnit> units;
  std::vector<double> truth;        // week-major, NaN for empty domains
  std::vector<double> domain_size;  // week-major unit counts

  void compute_truth();
  double truth_at(int area, int week) const {
    return truth[static_cast<std::size_t>(week) * n_areas + area];
  }
  // Counts of identical covariate rows per (area, week). In binary mode cells
  // are also split by the unit's response in the previous week.
  PopulationCells cells() const;
};

// Generator for model-based synthetic populations. Units carry an intercept,
// a gender indicator and linear and quadratic terms of a 13-category age
// variable (category midpoints, centered at 50 and scaled by 15).
struct GeneratorConfig {
  ResponseMode mode = ResponseMode::kGaussian;
  int n_units = 50000;
  int n_areas = 20;
  int n_weeks = 8;
  // fractions of units responding in 1, 2 and 3 consecutive weeks
  std::array<double, 3> pattern_fractions = {0.4, 0.3, 0.3};
  double area_size_sd = 0.5;  // log area sizes ~ N(0, area_size_sd^2)
  std::vector<double> beta;   // (intercept, gender, age, age^2)
  double rho = 0.6;           // gaussian: within-unit AR(1) of residuals
  double phi = 0.9;
  double sigma2 = 0.25;  // gaussian residual variance
  double sigma2_eta1 = 0.05;
  double sigma2_eta = 0.01;
  double prev_no_effect = 0.0;  // binary: logit shift after a "no" in the previous week
  double prev_yes_effect = 0.0;
  std::optional<double> box_cox_lambda;  // gaussian: store box_cox(raw) of raw = inverse_box_cox(z)
  // log w*_i = log(weight_scale) + weight_sd (weight_corr s_i + sqrt(1 - weight_corr^2) v_i),
  // with s_i the standardized unit mean response and v_i ~ N(0, 1).
  double weight_scale = 3.0;
  double weight_sd = 0.5;
  double weight_corr = 0.6;

  static GeneratorConfig gaussian_defaults();
  static GeneratorConfig binary_defaults();
  void validate() const;  // throws ConfigError
};

std::vector<std::string> generator_covariate_names();

SyntheticPopulation generate_population(const GeneratorConfig& config, RngStream& rng);

// Wraps respondent microdata as the finite population; the design weight of
// each unit's first response becomes w*_i. Previous-status columns are dropped.
SyntheticPopulation population_from_microdata(const PanelDataset& data);

struct SizeModel {
  double coef_mean = 0.1;    // s_i = exp(coef_mean * ybar_i + coef_weight * w*_i)
  double coef_weight = 0.2;
};

// pi_i = min(1, nbar s_i / sum s) with nbar = expected_frac * N, computed in
// log space. Throws DataError when the sizes are degenerate.
std::vector<double> inclusion_probabilities(const SyntheticPopulation& pop, double expected_frac,
                                            const SizeModel& size = {});

struct PanelSample {
  PanelDataset data;           // weights scaled; binary: previous-status covariate built
  std::vector<int> units;      // selected population units
  std::vector<double> pi;      // inclusion probabilities of all population units
};

// Poisson PPS: independent Bernoulli(pi_i) inclusion; a selected unit
// contributes every observed week with design weight 1 / pi_i.
PanelSample informative_sample(const SyntheticPopulation& pop, double expected_frac,
                               RngStream& rng, const SizeModel& size = {});

enum class EstimatorKind { kDirect, kTulm, kBulm, kOracle };

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::kDirect;
  std::string name;  // canonical: direct, gtulm, gbulm, btulm, bbulm, oracle
};

// Accepts direct, tulm, bulm, oracle and the mode-specific names; throws
// ConfigError for unknown names or a mode mismatch.
EstimatorSpec parse_estimator(const std::string& name, ResponseMode mode);

struct StudyConfig {
  int n_replicates = 25;
  double expected_frac = 0.02;
  double alpha = 0.05;
  SizeModel size;
  std::vector<std::string> estimators = {"direct", "tulm", "bulm"};
  std::optional<SamplerConfig> sampler;  // mode defaults when absent
  int threads = 1;

  void validate(ResponseMode mode) const;
};

struct DomainRecord {
  int replicate = 0;
  std::string estimator;
  int area = 0;
  int week = 0;
  double truth = 0.0;
  double estimate = 0.0;
  double sd = 0.0;  // posterior SD, or standard error for the direct estimator
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  bool defined = false;
  double error = 0.0;  // estimate - truth
  double squared_error = 0.0;
  bool covered = false;
  double interval_score = 0.0;
};

struct EstimatorRun {
  int replicate = 0;
  std::string estimator;
  bool ok = true;
  std::string error;
  double seconds = 0.0;
  int sample_units = 0;
  int sample_records = 0;
};

struct ReplicateMetrics {
  int replicate = 0;
  std::string estimator;
  double mse = 0.0;
  double interval_score = 0.0;
  double coverage = 0.0;
  int n_domains = 0;
};

struct EstimatorSummary {
  std::string estimator;
  double mse = 0.0;
  double abs_bias = 0.0;  // |mean over replicates of (estimate - truth)|, averaged over domains
  double coverage = 0.0;
  double interval_score = 0.0;
  long n_scored = 0;    // domain-replicates entering the averages
  long n_excluded = 0;  // undefined domain-replicates
  int n_failed = 0;     // replicates where the estimator failed
};

struct StudySummary {
  std::vector<EstimatorSummary> rows;
  // Fractions of replicates in which the longitudinal model beats the
  // cross-sectional model, which beats the direct estimator.
  double mse_order_fraction = std::numeric_limits<double>::quiet_NaN();
  double score_order_fraction = std::numeric_limits<double>::quiet_NaN();
  // Median over domain-replicates of (longitudinal posterior SD / direct SE)
  // where the direct estimate is defined with SE > 0.
  double median_se_ratio = std::numeric_limits<double>::quiet_NaN();
  std::string direct_variant = "horvitz_thompson";

  const EstimatorSummary* find(const std::string& name) const;
};

struct StudyResult {
  std::vector<DomainRecord> records;  // sorted by (replicate, estimator order, week, area)
  std::vector<EstimatorRun> runs;
  std::vector<ReplicateMetrics> per_replicate;
  StudySummary summary;
  int completed_replicates = 0;
};

using ProgressCallback = std::function<void(int replicate, const std::string& estimator)>;

// Replicate r uses rng.split(r); its sample uses split(0) of that stream and
// estimator e uses split(e + 1), so results are independent of scheduling.
// Estimator failures are recorded in `runs` and do not stop the study. When
// `cancel` becomes true, replicates not yet started are skipped.
StudyResult run_study(const SyntheticPopulation& pop, const StudyConfig& config,
                      const RngStream& rng, const std::atomic<bool>* cancel = nullptr,
                      const ProgressCallback& progress = {});

// Summary reduction; exposed for reuse on partial results.
StudySummary summarize_study(const std::vector<DomainRecord>& records,
                             const std::vector<EstimatorRun>& runs,
                             const std::vector<std::string>& estimator_order, ResponseMode mode);

void write_study_records(const std::vector<DomainRecord>& records, std::ostream& out,
                         char delimiter = ',');
void write_study_runs(const std::vector<EstimatorRun>& runs, std::ostream& out,
                      bool include_timing, char delimiter = ',');
void write_study_summary(const StudySummary& summary, std::ostream& out, char delimiter = ',');
void write_replicate_metrics(const std::vector<ReplicateMetrics>& rows, std::ostream& out,
                             char delimiter = ',');

}  // namespace tulm
