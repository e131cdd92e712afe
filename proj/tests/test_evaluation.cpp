#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "support.hpp"
#include "tulm/error.hpp"
#include "tulm/evaluation.hpp"

using namespace tulm;

TEST_SUITE("evaluation") {

TEST_CASE("interval score cases") {
  CHECK(interval_score(0, 1, 0.5, 0.05) == 1.0);
  CHECK(interval_score(0, 1, 1.5, 0.05) == 21.0);
  CHECK(interval_score(-1, 1, -2, 0.05) == 42.0);
  CHECK_THROWS_AS(interval_score(1, 0, 0.5, 0.05), ConfigError);
}

TEST_CASE("interval score is bounded below by the width") {
  RngStream r(1, 0);
  for (int k = 0; k < 10000; ++k) {
    double l = 3 * r.normal(), u = 3 * r.normal();
    if (l > u) std::swap(l, u);
    const double x = 3 * r.normal();
    const double alpha = 0.01 + 0.5 * r.uniform();
    const double s = interval_score(l, u, x, alpha);
    REQUIRE(s >= u - l);
    REQUIRE((s == u - l) == (l <= x && x <= u));
  }
}

TEST_CASE("Box-Cox values") {
  CHECK(box_cox(1.0, 0.3) == 0.0);
  CHECK(box_cox(1.0, -2.0) == 0.0);
  CHECK(box_cox(std::exp(1.0), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  // 40-digit evaluation of (100^-0.0863 - 1) / -0.0863
  CHECK(box_cox(100.0, -0.0863) == doctest::Approx(3.800144303264238121).epsilon(1e-14));
  CHECK(inverse_box_cox(box_cox(7.5, -0.0863), -0.0863) == doctest::Approx(7.5).epsilon(1e-13));
  CHECK(box_cox(1.0 + 1e-12, 1e-9) == doctest::Approx(1e-12).epsilon(1e-6));
  CHECK_THROWS_AS(box_cox(0.0, 0.5), DataError);
  CHECK_THROWS_AS(box_cox(-1.0, 0.5), DataError);
}

TEST_CASE("generator") {
  SUBCASE("three-week pattern") {
    GeneratorConfig g = GeneratorConfig::gaussian_defaults();
    g.n_units = 2000;
    g.pattern_fractions = {0, 0, 1};
    RngStream r(2, 0);
    const auto pop = generate_population(g, r);
    for (const auto& u : pop.units) {
      REQUIRE(u.n_observed() == 3);
      REQUIRE(u.last_week() < pop.n_weeks);
    }
  }
  SUBCASE("invalid fractions") {
    GeneratorConfig g = GeneratorConfig::gaussian_defaults();
    g.pattern_fractions = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(g.validate(), ConfigError);
  }
  SUBCASE("least squares recovers the fixed effects") {
    GeneratorConfig g = GeneratorConfig::gaussian_defaults();
    g.box_cox_lambda.reset();
    g.sigma2_eta1 = 1e-8;
    g.sigma2_eta = 1e-8;
    RngStream r(3, 0);
    const auto pop = generate_population(g, r);
    const int p = static_cast<int>(g.beta.size());
    Eigen::MatrixXd XtX = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd Xty = Eigen::VectorXd::Zero(p);
    for (const auto& u : pop.units) {
      const Eigen::Map<const Eigen::VectorXd> x(u.covariates.data(), p);
      for (double y : u.responses) {
        XtX += x * x.transpose();
        Xty += x * y;
      }
    }
    const Eigen::VectorXd b = XtX.ldlt().solve(Xty);
    for (int k = 0; k < p; ++k) CHECK(b(k) == doctest::Approx(g.beta[k]).epsilon(0.02).scale(1.0));
  }
}

TEST_CASE("truth table") {
  SyntheticPopulation pop;
  pop.n_areas = 1;
  pop.n_weeks = 1;
  pop.covariate_names = {kInterceptName};
  for (int i = 0; i < 4; ++i) {
    PopulationUnit u;
    u.id = std::to_string(i);
    u.covariates = {1.0};
    u.responses = {double(i + 1)};
    pop.units.push_back(u);
  }
  pop.compute_truth();
  CHECK(pop.truth_at(0, 0) == 2.5);
  CHECK(pop.domain_size[0] == 4.0);
  const auto cells = pop.cells();
  REQUIRE(cells.cells.size() == 1);
  CHECK(cells.cells[0].count == 4.0);
}

TEST_CASE("inclusion probabilities") {
  SyntheticPopulation pop;
  pop.n_areas = 1;
  pop.n_weeks = 1;
  pop.covariate_names = {kInterceptName};
  for (int i = 0; i < 500; ++i) {
    PopulationUnit u;
    u.id = std::to_string(i);
    u.covariates = {1.0};
    u.responses = {0.0};
    u.original_weight = 0.0;
    pop.units.push_back(u);
  }
  pop.compute_truth();
  const auto pi = inclusion_probabilities(pop, 0.02);
  for (double v : pi) CHECK(v == doctest::Approx(0.02).epsilon(1e-12));
  SUBCASE("equal sizes give an independent Bernoulli sample") {
    // chi-square on the inclusion count in 20 blocks of 25 units over 400 draws
    RngStream r(4, 0);
    std::vector<double> block(20, 0.0);
    const int reps = 400;
    std::vector<int> count_hist(6, 0);
    for (int k = 0; k < reps; ++k) {
      RngStream s = r.split(k);
      for (int i = 0; i < 500; ++i) {
        if (s.uniform() < pi[i]) block[i / 25] += 1;
      }
    }
    double chi = 0.0;
    const double expected = reps * 25 * 0.02;
    for (double b : block) chi += (b - expected) * (b - expected) / expected;
    boost::math::chi_squared dist(19);
    CHECK(boost::math::cdf(complement(dist, chi)) > 0.001);
  }
}

TEST_CASE("realized sample size follows the Poisson-binomial moments") {
  GeneratorConfig g = GeneratorConfig::gaussian_defaults();
  g.n_units = 5000;
  RngStream r(5, 0);
  const auto pop = generate_population(g, r);
  const auto pi = inclusion_probabilities(pop, 0.05);
  double total_s = 0.0;
  for (const auto& u : pop.units) total_s += std::exp(0.1 * u.mean_response() + 0.2 * u.original_weight);
  double mean = 0.0, var = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    const auto& u = pop.units[i];
    const double expect = std::min(1.0, 250.0 * std::exp(0.1 * u.mean_response() + 0.2 * u.original_weight) / total_s);
    REQUIRE(pi[i] == doctest::Approx(expect).epsilon(1e-9));
    mean += pi[i];
    var += pi[i] * (1 - pi[i]);
  }
  CHECK(mean <= 250.0 + 1e-9);
  double avg = 0.0;
  const int reps = 200;
  for (int k = 0; k < reps; ++k) {
    RngStream s(6, k);
    avg += informative_sample(pop, 0.05, s).units.size();
  }
  avg /= reps;
  CHECK(std::fabs(avg - mean) < 4 * std::sqrt(var / reps));
}

TEST_CASE("sizes are informative") {
  GeneratorConfig g = GeneratorConfig::gaussian_defaults();
  g.n_units = 5000;
  RngStream r(7, 0);
  const auto pop = generate_population(g, r);
  const auto pi = inclusion_probabilities(pop, 0.02);
  for (std::size_t i = 0; i < pop.units.size(); ++i) {
    const auto& u = pop.units[i];
    const double s = std::exp(0.1 * u.mean_response() + 0.2 * u.original_weight);
    const double s0 = std::exp(0.1 * pop.units[0].mean_response() + 0.2 * pop.units[0].original_weight);
    if (pi[i] < 1.0 && pi[0] < 1.0) REQUIRE(pi[i] / pi[0] == doctest::Approx(s / s0).epsilon(1e-9));
  }
}

TEST_CASE("estimator names") {
  CHECK(parse_estimator("tulm", ResponseMode::kGaussian).name == "gtulm");
  CHECK(parse_estimator("bulm", ResponseMode::kBinary).name == "bbulm");
  CHECK(parse_estimator("btulm", ResponseMode::kBinary).kind == EstimatorKind::kTulm);
  CHECK_THROWS_AS(parse_estimator("btulm", ResponseMode::kGaussian), ConfigError);
  CHECK_THROWS_AS(parse_estimator("lasso", ResponseMode::kGaussian), ConfigError);
}

namespace {

SyntheticPopulation small_population(ResponseMode mode, std::uint64_t seed) {
  GeneratorConfig g = mode == ResponseMode::kGaussian ? GeneratorConfig::gaussian_defaults()
                                                      : GeneratorConfig::binary_defaults();
  g.n_units = 4000;
  g.n_areas = 4;
  g.n_weeks = 3;
  RngStream r(seed, 0);
  return generate_population(g, r);
}

}  // namespace

TEST_CASE("oracle estimator has zero loss") {
  const auto pop = small_population(ResponseMode::kGaussian, 8);
  StudyConfig c;
  c.n_replicates = 3;
  c.expected_frac = 0.05;
  c.estimators = {"oracle"};
  const auto res = run_study(pop, c, RngStream(9, 0));
  const auto* s = res.summary.find("oracle");
  REQUIRE(s);
  CHECK(s->mse == 0.0);
  CHECK(s->abs_bias == 0.0);
  CHECK(s->interval_score == 0.0);
  CHECK(s->coverage == 1.0);
}

TEST_CASE("study is deterministic, scheduling-independent and decomposes MSE") {
  const auto pop = small_population(ResponseMode::kGaussian, 10);
  StudyConfig c;
  c.n_replicates = 4;
  c.expected_frac = 0.05;
  c.estimators = {"direct", "tulm", "bulm"};
  SamplerConfig sc = SamplerConfig::gaussian_defaults();
  sc.n_iter = 200;
  sc.n_burn = 50;
  c.sampler = sc;
  const auto a = run_study(pop, c, RngStream(11, 0));
  c.threads = 3;
  const auto b = run_study(pop, c, RngStream(11, 0));
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    REQUIRE(a.records[k].estimate == b.records[k].estimate);
    REQUIRE(a.records[k].ci_upper == b.records[k].ci_upper);
  }
  CHECK(a.completed_replicates == 4);
  // per domain: mean squared error = bias^2 + variance across replicates
  std::map<std::tuple<std::string, int, int>, std::vector<const DomainRecord*>> groups;
  for (const auto& r : a.records)
    if (r.defined) groups[{r.estimator, r.area, r.week}].push_back(&r);
  for (const auto& [key, rs] : groups) {
    const double n = rs.size();
    double mse = 0.0, bias = 0.0, mean = 0.0;
    for (auto* r : rs) {
      mse += r->squared_error / n;
      bias += r->error / n;
      mean += r->estimate / n;
    }
    double var = 0.0;
    for (auto* r : rs) var += (r->estimate - mean) * (r->estimate - mean) / n;
    CHECK(mse == doctest::Approx(bias * bias + var).epsilon(1e-10));
  }
}

TEST_CASE("invalid sampler settings are rejected before any replicate runs") {
  const auto pop = small_population(ResponseMode::kBinary, 12);
  StudyConfig c;
  c.n_replicates = 2;
  c.expected_frac = 0.05;
  SamplerConfig sc = SamplerConfig::binary_defaults();
  sc.sigma2_beta = -1.0;
  c.sampler = sc;
  CHECK_THROWS_AS(run_study(pop, c, RngStream(13, 0)), ConfigError);
  c.sampler.reset();
  c.estimators = {"oracle", "lasso"};
  CHECK_THROWS_AS(run_study(pop, c, RngStream(13, 0)), ConfigError);
}

TEST_CASE("cancellation skips remaining replicates") {
  const auto pop = small_population(ResponseMode::kGaussian, 14);
  StudyConfig c;
  c.n_replicates = 5;
  c.estimators = {"direct"};
  std::atomic<bool> cancel{true};
  const auto res = run_study(pop, c, RngStream(15, 0), &cancel);
  CHECK(res.completed_replicates == 0);
}

}
