#include "tulm/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "tulm/baseline.hpp"
#include "tulm/btulm.hpp"
#include "tulm/error.hpp"
#include "tulm/gtulm.hpp"
#include "tulm/parallel.hpp"
#include "tulm/prediction.hpp"
#include "tulm/table.hpp"

namespace tulm {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Age category midpoints (years).
constexpr std::array<double, 13> kAgeMidpoints = {20, 25, 30, 35, 40, 45, 50,
                                                  55, 60, 65, 70, 75, 82};

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double box_cox(double value, double lambda) {
  if (!(value > 0.0)) {
    std::ostringstream os;
    os << "Box-Cox transform needs a positive value, got " << value;
    throw DataError(os.str());
  }
  if (lambda == 0.0) return std::log(value);
  // expm1 keeps precision for small lambda log y
  return std::expm1(lambda * std::log(value)) / lambda;
}

std::vector<double> box_cox(const std::vector<double>& values, double lambda) {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(box_cox(v, lambda));
  return out;
}

double inverse_box_cox(double z, double lambda) {
  if (lambda == 0.0) return std::exp(z);
  const double base = lambda * z;
  if (!(base > -1.0)) {
    std::ostringstream os;
    os << "value " << z << " lies outside the range of the Box-Cox transform with lambda " << lambda;
    throw NumericError(os.str());
  }
  return std::exp(std::log1p(base) / lambda);
}

double interval_score(double lo, double hi, double x, double alpha) {
  if (!(lo <= hi)) throw ConfigError("interval score needs lo <= hi");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  double s = hi - lo;
  if (x < lo) s += 2.0 / alpha * (lo - x);
  if (x > hi) s += 2.0 / alpha * (x - hi);
  return s;
}

double PopulationUnit::mean_response() const {
  double s = 0.0;
  for (double y : responses) s += y;
  return responses.empty() ? kNaN : s / static_cast<double>(responses.size());
}

void SyntheticPopulation::compute_truth() {
  const std::size_t nd = static_cast<std::size_t>(n_areas) * n_weeks;
  std::vector<double> sum(nd, 0.0);
  domain_size.assign(nd, 0.0);
  for (const auto& u : units) {
    for (int k = 0; k < u.n_observed(); ++k) {
      const std::size_t d = static_cast<std::size_t>(u.first_week + k) * n_areas + u.area;
      sum[d] += u.responses[k];
      domain_size[d] += 1.0;
    }
  }
  truth.assign(nd, kNaN);
  for (std::size_t d = 0; d < nd; ++d) {
    if (domain_size[d] > 0.0) truth[d] = sum[d] / domain_size[d];
  }
}

PopulationCells SyntheticPopulation::cells() const {
  const bool binary = mode == ResponseMode::kBinary;
  std::map<std::tuple<int, int, int, std::vector<double>>, double> counts;
  for (const auto& u : units) {
    for (int t = u.first_week; t <= u.last_week(); ++t) {
      int prev = -1;
      if (binary) {
        prev = static_cast<int>(PrevStatus::kNotSampled);
        if (u.observed_at(t - 1)) {
          prev = static_cast<int>(u.response_at(t - 1) > 0.5 ? PrevStatus::kPrevYes
                                                             : PrevStatus::kPrevNo);
        }
      }
      counts[std::make_tuple(t, u.area, prev, u.covariates)] += 1.0;
    }
  }
  PopulationCells out;
  out.covariate_names = covariate_names;
  out.n_areas = n_areas;
  out.n_weeks = n_weeks;
  out.cells.reserve(counts.size());
  for (const auto& [key, count] : counts) {
    PopulationCell c;
    c.week = std::get<0>(key);
    c.area = std::get<1>(key);
    if (std::get<2>(key) >= 0) c.prev_status = static_cast<PrevStatus>(std::get<2>(key));
    c.covariates = std::get<3>(key);
    c.count = count;
    out.cells.push_back(std::move(c));
  }
  return out;
}

GeneratorConfig GeneratorConfig::gaussian_defaults() {
  GeneratorConfig g;
  g.mode = ResponseMode::kGaussian;
  g.beta = {3.8, 0.15, 0.2, -0.1};
  g.box_cox_lambda = -0.0863;
  return g;
}

GeneratorConfig GeneratorConfig::binary_defaults() {
  GeneratorConfig g;
  g.mode = ResponseMode::kBinary;
  g.beta = {-1.3, 0.2, -0.3, -0.2};
  g.sigma2_eta1 = 0.15;
  g.sigma2_eta = 0.02;
  g.prev_no_effect = -0.5;
  g.prev_yes_effect = 1.5;
  return g;
}

void GeneratorConfig::validate() const {
  if (n_units <= 0 || n_areas <= 0 || n_weeks <= 0) {
    throw ConfigError("generator needs positive n_units, n_areas and n_weeks");
  }
  double total = 0.0;
  for (double f : pattern_fractions) {
    if (!(f >= 0.0)) throw ConfigError("invalid panel pattern fractions (negative entry)");
    total += f;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw ConfigError("invalid panel pattern fractions (must sum to 1)");
  for (int L = 1; L <= 3; ++L) {
    if (pattern_fractions[L - 1] > 0.0 && L > n_weeks) {
      throw ConfigError("panel pattern longer than the number of weeks");
    }
  }
  if (beta.size() != 4) throw ConfigError("generator beta needs 4 entries (intercept, gender, age, age^2)");
  if (!(rho > -1.0 && rho < 1.0) || !(phi > -1.0 && phi < 1.0)) {
    throw ConfigError("generator rho and phi must lie in (-1, 1)");
  }
  if (!(sigma2 > 0.0) || !(sigma2_eta1 > 0.0) || !(sigma2_eta > 0.0)) {
    throw ConfigError("generator variances must be positive");
  }
  if (!(weight_scale > 0.0) || !(weight_sd >= 0.0) || !(weight_corr >= -1.0 && weight_corr <= 1.0)) {
    throw ConfigError("invalid original-weight model");
  }
  if (box_cox_lambda && mode != ResponseMode::kGaussian) {
    throw ConfigError("Box-Cox transform applies to gaussian mode only");
  }
}

std::vector<std::string> generator_covariate_names() {
  return {kInterceptName, "gender", "age", "age_sq"};
}

SyntheticPopulation generate_population(const GeneratorConfig& g, RngStream& rng) {
  g.validate();
  const int m = g.n_areas;
  const int T = g.n_weeks;
  SyntheticPopulation pop;
  pop.mode = g.mode;
  pop.n_areas = m;
  pop.n_weeks = T;
  pop.covariate_names = generator_covariate_names();

  std::vector<double> area_weight(m);
  for (double& a : area_weight) a = std::exp(g.area_size_sd * rng.normal());
  std::discrete_distribution<int> pick_area(area_weight.begin(), area_weight.end());

  Eigen::MatrixXd eta(T, m);
  for (int j = 0; j < m; ++j) eta(0, j) = std::sqrt(g.sigma2_eta1) * rng.normal();
  for (int t = 1; t < T; ++t) {
    for (int j = 0; j < m; ++j) eta(t, j) = g.phi * eta(t - 1, j) + std::sqrt(g.sigma2_eta) * rng.normal();
  }

  const double innovation_sd = std::sqrt(g.sigma2 * (1.0 - g.rho * g.rho));
  pop.units.resize(g.n_units);
  for (int i = 0; i < g.n_units; ++i) {
    PopulationUnit& u = pop.units[i];
    u.id = "u" + std::to_string(i + 1);
    u.area = pick_area(rng.engine());
    const double r = rng.uniform();
    const int L = r < g.pattern_fractions[0] ? 1
                  : r < g.pattern_fractions[0] + g.pattern_fractions[1] ? 2
                                                                        : 3;
    u.first_week = std::min(T - L, static_cast<int>(rng.uniform() * (T - L + 1)));
    const double gender = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const int age_cat = std::min(12, static_cast<int>(rng.uniform() * 13.0));
    const double age = (kAgeMidpoints[age_cat] - 50.0) / 15.0;
    u.covariates = {1.0, gender, age, age * age};
    double xb = 0.0;
    for (int k = 0; k < 4; ++k) xb += g.beta[k] * u.covariates[k];

    u.responses.resize(L);
    if (g.mode == ResponseMode::kGaussian) {
      double e = std::sqrt(g.sigma2) * rng.normal();
      for (int k = 0; k < L; ++k) {
        if (k > 0) e = g.rho * e + innovation_sd * rng.normal();
        const double z = xb + eta(u.first_week + k, u.area) + e;
        u.responses[k] = g.box_cox_lambda ? box_cox(inverse_box_cox(z, *g.box_cox_lambda), *g.box_cox_lambda) : z;
      }
    } else {
      for (int k = 0; k < L; ++k) {
        double lambda = xb + eta(u.first_week + k, u.area);
        if (k > 0) lambda += u.responses[k - 1] > 0.5 ? g.prev_yes_effect : g.prev_no_effect;
        u.responses[k] = rng.uniform() < logistic(lambda) ? 1.0 : 0.0;
      }
    }
  }

  // Original weights tied to the standardized unit mean response.
  double mean = 0.0;
  for (const auto& u : pop.units) mean += u.mean_response();
  mean /= g.n_units;
  double var = 0.0;
  for (const auto& u : pop.units) var += (u.mean_response() - mean) * (u.mean_response() - mean);
  const double sd = std::sqrt(var / std::max(1, g.n_units - 1));
  const double c = g.weight_corr;
  for (auto& u : pop.units) {
    const double s = sd > 0.0 ? (u.mean_response() - mean) / sd : 0.0;
    const double v = rng.normal();
    u.original_weight = g.weight_scale * std::exp(g.weight_sd * (c * s + std::sqrt(1.0 - c * c) * v));
  }
  pop.compute_truth();
  return pop;
}

SyntheticPopulation population_from_microdata(const PanelDataset& data) {
  SyntheticPopulation pop;
  pop.mode = data.mode;
  pop.n_areas = data.n_areas;
  pop.n_weeks = data.n_weeks;
  const std::size_t p = data.covariate_names.size() - (data.has_prev_covariate ? 2 : 0);
  pop.covariate_names.assign(data.covariate_names.begin(), data.covariate_names.begin() + p);
  // Records are sorted by week, so each unit's responses arrive in order; a
  // gap left by item nonresponse starts a new population unit.
  std::unordered_map<std::string, int> open;  // unit id -> population index
  std::unordered_map<std::string, int> segments;
  for (const auto& r : data.records) {
    auto it = open.find(r.unit_id);
    if (it != open.end() && pop.units[it->second].last_week() == r.week - 1) {
      pop.units[it->second].responses.push_back(r.response);
      continue;
    }
    PopulationUnit u;
    const int seg = segments[r.unit_id]++;
    u.id = seg == 0 ? r.unit_id : r.unit_id + ":" + std::to_string(seg + 1);
    u.area = r.area;
    u.covariates.assign(r.covariates.begin(), r.covariates.begin() + p);
    u.first_week = r.week;
    u.responses = {r.response};
    u.trials = r.trials;
    u.original_weight = r.design_weight;
    open[r.unit_id] = static_cast<int>(pop.units.size());
    pop.units.push_back(std::move(u));
  }
  pop.compute_truth();
  return pop;
}

std::vector<double> inclusion_probabilities(const SyntheticPopulation& pop, double expected_frac,
                                            const SizeModel& size) {
  if (!(expected_frac > 0.0 && expected_frac < 1.0)) {
    throw ConfigError("expected sample fraction must lie in (0, 1)");
  }
  const std::size_t N = pop.units.size();
  if (N == 0) throw DataError("population is empty");
  std::vector<double> log_s(N);
  double lmax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < N; ++i) {
    const auto& u = pop.units[i];
    log_s[i] = size.coef_mean * u.mean_response() + size.coef_weight * u.original_weight;
    if (!std::isfinite(log_s[i])) throw DataError("degenerate size variable (non-finite log size)");
    lmax = std::max(lmax, log_s[i]);
  }
  double total = 0.0;
  for (double l : log_s) total += std::exp(l - lmax);
  if (!(total > 0.0) || !std::isfinite(total)) throw DataError("degenerate size variable");
  const double nbar = expected_frac * static_cast<double>(N);
  std::vector<double> pi(N);
  for (std::size_t i = 0; i < N; ++i) pi[i] = std::min(1.0, nbar * std::exp(log_s[i] - lmax) / total);
  return pi;
}

PanelSample informative_sample(const SyntheticPopulation& pop, double expected_frac,
                               RngStream& rng, const SizeModel& size) {
  PanelSample s;
  s.pi = inclusion_probabilities(pop, expected_frac, size);
  PanelDataset d;
  d.mode = pop.mode;
  d.n_areas = pop.n_areas;
  d.n_weeks = pop.n_weeks;
  d.covariate_names = pop.covariate_names;
  for (std::size_t i = 0; i < pop.units.size(); ++i) {
    if (!(rng.uniform() < s.pi[i])) continue;
    s.units.push_back(static_cast<int>(i));
    const auto& u = pop.units[i];
    for (int k = 0; k < u.n_observed(); ++k) {
      UnitWeekRecord r;
      r.unit_id = u.id;
      r.area = u.area;
      r.week = u.first_week + k;
      r.response = u.responses[k];
      r.trials = u.trials;
      r.design_weight = 1.0 / s.pi[i];
      r.covariates = u.covariates;
      d.records.push_back(std::move(r));
    }
  }
  if (d.records.empty()) throw DataError("informative sample selected no units");
  build_partitions(d);
  d = scale_weights(d);
  if (d.mode == ResponseMode::kBinary) d = build_prev_covariate(d);
  s.data = std::move(d);
  return s;
}

EstimatorSpec parse_estimator(const std::string& name, ResponseMode mode) {
  const bool gaussian = mode == ResponseMode::kGaussian;
  EstimatorSpec e;
  if (name == "direct") {
    e.kind = EstimatorKind::kDirect;
    e.name = "direct";
  } else if (name == "oracle") {
    e.kind = EstimatorKind::kOracle;
    e.name = "oracle";
  } else if (name == "tulm" || (gaussian && name == "gtulm") || (!gaussian && name == "btulm")) {
    e.kind = EstimatorKind::kTulm;
    e.name = gaussian ? "gtulm" : "btulm";
  } else if (name == "bulm" || (gaussian && name == "gbulm") || (!gaussian && name == "bbulm")) {
    e.kind = EstimatorKind::kBulm;
    e.name = gaussian ? "gbulm" : "bbulm";
  } else if (name == "gtulm" || name == "gbulm" || name == "btulm" || name == "bbulm") {
    throw ConfigError("estimator '" + name + "' does not match " + to_string(mode) + " mode");
  } else {
    throw ConfigError("unknown estimator '" + name + "'");
  }
  return e;
}

void StudyConfig::validate(ResponseMode mode) const {
  if (n_replicates <= 0) throw ConfigError("study needs at least one replicate");
  if (!(expected_frac > 0.0 && expected_frac < 1.0)) {
    throw ConfigError("expected sample fraction must lie in (0, 1)");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (estimators.empty()) throw ConfigError("study needs at least one estimator");
  std::vector<std::string> seen;
  for (const auto& n : estimators) {
    const std::string c = parse_estimator(n, mode).name;
    if (std::find(seen.begin(), seen.end(), c) != seen.end()) {
      throw ConfigError("estimator '" + n + "' listed twice");
    }
    seen.push_back(c);
  }
  if (sampler) sampler->validate();
  if (threads <= 0) throw ConfigError("threads must be positive");
}

const EstimatorSummary* StudySummary::find(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.estimator == name) return &r;
  }
  return nullptr;
}

namespace {

void score(DomainRecord& r, double alpha) {
  r.defined = std::isfinite(r.estimate) && std::isfinite(r.ci_lower) && std::isfinite(r.ci_upper);
  if (!r.defined) return;
  r.error = r.estimate - r.truth;
  r.squared_error = r.error * r.error;
  r.covered = r.ci_lower <= r.truth && r.truth <= r.ci_upper;
  r.interval_score = interval_score(r.ci_lower, r.ci_upper, r.truth, alpha);
}

std::vector<DomainRecord> run_estimator(const EstimatorSpec& spec, const SyntheticPopulation& pop,
                                        const PopulationCells& cells, const PanelSample& sample,
                                        const StudyConfig& config, const SamplerConfig& sampler,
                                        const RngStream& rng, int replicate) {
  const int m = pop.n_areas;
  const int T = pop.n_weeks;
  std::vector<DomainRecord> out;
  auto emit = [&](int j, int t, double est, double sd, double lo, double hi) {
    const double truth = pop.truth_at(j, t);
    if (!std::isfinite(truth)) return;
    DomainRecord r;
    r.replicate = replicate;
    r.estimator = spec.name;
    r.area = j;
    r.week = t;
    r.truth = truth;
    r.estimate = est;
    r.sd = sd;
    r.ci_lower = lo;
    r.ci_upper = hi;
    score(r, config.alpha);
    out.push_back(r);
  };
  const bool gaussian = pop.mode == ResponseMode::kGaussian;
  switch (spec.kind) {
    case EstimatorKind::kOracle: {
      for (int t = 0; t < T; ++t) {
        for (int j = 0; j < m; ++j) {
          const double x = pop.truth_at(j, t);
          emit(j, t, x, 0.0, x, x);
        }
      }
      break;
    }
    case EstimatorKind::kDirect: {
      const double z = normal_critical_value(config.alpha);
      const auto est = direct_estimate(sample.data, pop.domain_size);
      for (const auto& d : est) {
        if (d.defined) {
          emit(d.area, d.week, d.point, d.se, d.point - z * d.se, d.point + z * d.se);
        } else {
          emit(d.area, d.week, kNaN, kNaN, kNaN, kNaN);
        }
      }
      break;
    }
    case EstimatorKind::kTulm:
    case EstimatorKind::kBulm: {
      std::vector<PosteriorDraws> draws;
      RngStream fit_rng = rng.split(0);
      if (spec.kind == EstimatorKind::kTulm) {
        draws.push_back(gaussian ? run_gtulm(sample.data, sampler, fit_rng)
                                 : run_btulm(sample.data, sampler, fit_rng));
      } else {
        draws = gaussian ? run_gbulm_per_week(sample.data, sampler, fit_rng)
                         : run_bbulm_per_week(sample.data, sampler, fit_rng);
      }
      PredictionOptions opt;
      opt.alpha = config.alpha;
      const DomainPrediction pred = gaussian ? predict_gaussian_domains(draws, cells, rng.split(1), opt)
                                             : predict_binary_domains(draws, cells, rng.split(1), opt);
      for (const auto& e : pred.estimates) {
        if (e.n_draws > 0) {
          emit(e.area, e.week, e.point, e.sd, e.ci_lower, e.ci_upper);
        } else {
          emit(e.area, e.week, kNaN, kNaN, kNaN, kNaN);
        }
      }
      break;
    }
  }
  return out;
}

struct ReplicateOutput {
  std::vector<DomainRecord> records;
  std::vector<EstimatorRun> runs;
  bool done = false;
};

std::vector<ReplicateMetrics> replicate_metrics(const std::vector<DomainRecord>& records,
                                                const std::vector<EstimatorRun>& runs,
                                                const std::vector<std::string>& order) {
  std::map<std::pair<int, int>, ReplicateMetrics> acc;  // (replicate, estimator index)
  auto index_of = [&](const std::string& n) {
    return static_cast<int>(std::find(order.begin(), order.end(), n) - order.begin());
  };
  for (const auto& run : runs) {
    if (!run.ok) continue;
    auto& m = acc[{run.replicate, index_of(run.estimator)}];
    m.replicate = run.replicate;
    m.estimator = run.estimator;
  }
  for (const auto& r : records) {
    if (!r.defined) continue;
    auto it = acc.find({r.replicate, index_of(r.estimator)});
    if (it == acc.end()) continue;
    auto& m = it->second;
    m.mse += r.squared_error;
    m.interval_score += r.interval_score;
    m.coverage += r.covered ? 1.0 : 0.0;
    ++m.n_domains;
  }
  std::vector<ReplicateMetrics> out;
  for (auto& [key, m] : acc) {
    if (m.n_domains > 0) {
      m.mse /= m.n_domains;
      m.interval_score /= m.n_domains;
      m.coverage /= m.n_domains;
    } else {
      m.mse = m.interval_score = m.coverage = kNaN;
    }
    out.push_back(m);
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

StudySummary summarize_study(const std::vector<DomainRecord>& records,
                             const std::vector<EstimatorRun>& runs,
                             const std::vector<std::string>& order, ResponseMode mode) {
  StudySummary s;
  for (const auto& name : order) {
    EstimatorSummary row;
    row.estimator = name;
    std::map<std::pair<int, int>, std::pair<double, int>> by_domain;
    for (const auto& r : records) {
      if (r.estimator != name) continue;
      if (!r.defined) {
        ++row.n_excluded;
        continue;
      }
      ++row.n_scored;
      row.mse += r.squared_error;
      row.coverage += r.covered ? 1.0 : 0.0;
      row.interval_score += r.interval_score;
      auto& b = by_domain[{r.week, r.area}];
      b.first += r.error;
      ++b.second;
    }
    if (row.n_scored > 0) {
      const double n = static_cast<double>(row.n_scored);
      row.mse /= n;
      row.coverage /= n;
      row.interval_score /= n;
      double ab = 0.0;
      for (const auto& [key, b] : by_domain) ab += std::fabs(b.first / b.second);
      row.abs_bias = ab / static_cast<double>(by_domain.size());
    } else {
      row.mse = row.coverage = row.interval_score = row.abs_bias = kNaN;
    }
    for (const auto& run : runs) {
      if (run.estimator == name && !run.ok) ++row.n_failed;
    }
    s.rows.push_back(row);
  }

  const bool gaussian = mode == ResponseMode::kGaussian;
  const std::string tulm = gaussian ? "gtulm" : "btulm";
  const std::string bulm = gaussian ? "gbulm" : "bbulm";
  const bool have = std::find(order.begin(), order.end(), tulm) != order.end() &&
                    std::find(order.begin(), order.end(), bulm) != order.end() &&
                    std::find(order.begin(), order.end(), "direct") != order.end();
  if (have) {
    const auto metrics = replicate_metrics(records, runs, order);
    std::map<int, std::map<std::string, const ReplicateMetrics*>> by_rep;
    for (const auto& m : metrics) by_rep[m.replicate][m.estimator] = &m;
    int total = 0, mse_ok = 0, score_ok = 0;
    for (const auto& [rep, ms] : by_rep) {
      if (!ms.count(tulm) || !ms.count(bulm) || !ms.count("direct")) continue;
      const auto* a = ms.at(tulm);
      const auto* b = ms.at(bulm);
      const auto* c = ms.at("direct");
      ++total;
      if (a->mse < b->mse && b->mse < c->mse) ++mse_ok;
      if (a->interval_score < b->interval_score && b->interval_score < c->interval_score) ++score_ok;
    }
    if (total > 0) {
      s.mse_order_fraction = static_cast<double>(mse_ok) / total;
      s.score_order_fraction = static_cast<double>(score_ok) / total;
    }
  }
  if (std::find(order.begin(), order.end(), tulm) != order.end() &&
      std::find(order.begin(), order.end(), "direct") != order.end()) {
    std::map<std::tuple<int, int, int>, double> direct_se;
    for (const auto& r : records) {
      if (r.estimator == "direct" && r.defined && r.sd > 0.0) {
        direct_se[{r.replicate, r.week, r.area}] = r.sd;
      }
    }
    std::vector<double> ratios;
    for (const auto& r : records) {
      if (r.estimator != tulm || !r.defined) continue;
      const auto it = direct_se.find({r.replicate, r.week, r.area});
      if (it != direct_se.end()) ratios.push_back(r.sd / it->second);
    }
    s.median_se_ratio = median(std::move(ratios));
  }
  return s;
}

StudyResult run_study(const SyntheticPopulation& pop, const StudyConfig& config,
                      const RngStream& rng, const std::atomic<bool>* cancel,
                      const ProgressCallback& progress) {
  config.validate(pop.mode);
  if (pop.truth.size() != static_cast<std::size_t>(pop.n_areas) * pop.n_weeks) {
    throw DataError("population truth table is missing");
  }
  std::vector<EstimatorSpec> specs;
  std::vector<std::string> order;
  for (const auto& n : config.estimators) {
    specs.push_back(parse_estimator(n, pop.mode));
    order.push_back(specs.back().name);
  }
  const SamplerConfig sampler = config.sampler ? *config.sampler
                                : pop.mode == ResponseMode::kGaussian ? SamplerConfig::gaussian_defaults()
                                                                      : SamplerConfig::binary_defaults();
  const PopulationCells cells = pop.cells();

  std::vector<ReplicateOutput> outputs(config.n_replicates);
  parallel_for(config.n_replicates, config.threads, [&](int rep) {
    if (cancel && cancel->load()) return;
    ReplicateOutput& out = outputs[rep];
    const RngStream rep_rng = rng.split(static_cast<std::uint64_t>(rep));
    PanelSample sample;
    std::string sample_error;
    try {
      RngStream srng = rep_rng.split(0);
      sample = informative_sample(pop, config.expected_frac, srng, config.size);
    } catch (const std::exception& e) {
      sample_error = e.what();
    }
    for (std::size_t e = 0; e < specs.size(); ++e) {
      if (cancel && cancel->load()) return;
      EstimatorRun run;
      run.replicate = rep;
      run.estimator = specs[e].name;
      run.sample_units = static_cast<int>(sample.units.size());
      run.sample_records = static_cast<int>(sample.data.records.size());
      const auto start = std::chrono::steady_clock::now();
      if (!sample_error.empty()) {
        run.ok = false;
        run.error = "sampling failed: " + sample_error;
      } else {
        try {
          auto recs = run_estimator(specs[e], pop, cells, sample, config, sampler,
                                    rep_rng.split(e + 1), rep);
          out.records.insert(out.records.end(), recs.begin(), recs.end());
        } catch (const std::exception& ex) {
          run.ok = false;
          run.error = ex.what();
        }
      }
      run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out.runs.push_back(run);
      if (progress) progress(rep, specs[e].name);
    }
    out.done = true;
  });

  StudyResult result;
  for (auto& o : outputs) {
    if (!o.done) continue;
    ++result.completed_replicates;
    result.records.insert(result.records.end(), o.records.begin(), o.records.end());
    result.runs.insert(result.runs.end(), o.runs.begin(), o.runs.end());
  }
  result.per_replicate = replicate_metrics(result.records, result.runs, order);
  result.summary = summarize_study(result.records, result.runs, order, pop.mode);
  return result;
}

void write_study_records(const std::vector<DomainRecord>& records, std::ostream& out,
                         char delimiter) {
  write_row(out, {"replicate", "estimator", "area", "week", "truth", "estimate", "sd", "ci_lower",
                  "ci_upper", "defined", "squared_error", "error", "covered", "interval_score"},
            delimiter);
  for (const auto& r : records) {
    write_row(out,
              {std::to_string(r.replicate + 1), r.estimator, std::to_string(r.area + 1),
               std::to_string(r.week + 1), format_double(r.truth), format_double(r.estimate),
               format_double(r.sd), format_double(r.ci_lower), format_double(r.ci_upper),
               r.defined ? "1" : "0", format_double(r.defined ? r.squared_error : kNaN),
               format_double(r.defined ? r.error : kNaN), r.covered ? "1" : "0",
               format_double(r.defined ? r.interval_score : kNaN)},
              delimiter);
  }
}

void write_study_runs(const std::vector<EstimatorRun>& runs, std::ostream& out,
                      bool include_timing, char delimiter) {
  std::vector<std::string> header = {"replicate", "estimator", "ok", "sample_units",
                                     "sample_records", "error"};
  if (include_timing) header.emplace_back("seconds");
  write_row(out, header, delimiter);
  for (const auto& r : runs) {
    std::vector<std::string> row = {std::to_string(r.replicate + 1), r.estimator, r.ok ? "1" : "0",
                                    std::to_string(r.sample_units),
                                    std::to_string(r.sample_records), r.error};
    if (include_timing) row.push_back(format_double(r.seconds));
    write_row(out, row, delimiter);
  }
}

void write_study_summary(const StudySummary& s, std::ostream& out, char delimiter) {
  write_row(out, {"estimator", "mse", "abs_bias", "coverage", "interval_score", "n_scored",
                  "n_excluded", "n_failed"},
            delimiter);
  for (const auto& r : s.rows) {
    write_row(out,
              {r.estimator, format_double(r.mse), format_double(r.abs_bias),
               format_double(r.coverage), format_double(r.interval_score),
               std::to_string(r.n_scored), std::to_string(r.n_excluded),
               std::to_string(r.n_failed)},
              delimiter);
  }
}

void write_replicate_metrics(const std::vector<ReplicateMetrics>& rows, std::ostream& out,
                             char delimiter) {
  write_row(out, {"replicate", "estimator", "mse", "interval_score", "coverage", "n_domains"},
            delimiter);
  for (const auto& m : rows) {
    write_row(out,
              {std::to_string(m.replicate + 1), m.estimator, format_double(m.mse),
               format_double(m.interval_score), format_double(m.coverage),
               std::to_string(m.n_domains)},
              delimiter);
  }
}

}  // namespace tulm
