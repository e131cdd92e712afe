#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "sim.hpp"
#include "support.hpp"
#include "tulm/baseline.hpp"
#include "tulm/error.hpp"
#include "tulm/gtulm.hpp"

using namespace tulm;

namespace {

PanelDataset one_domain(const std::vector<double>& y, const std::vector<double>& w, int m = 1) {
  PanelDataset d;
  d.n_areas = m;
  d.n_weeks = 1;
  d.covariate_names = {kInterceptName};
  for (std::size_t i = 0; i < y.size(); ++i) {
    UnitWeekRecord r;
    r.unit_id = "u" + std::to_string(i);
    r.response = y[i];
    r.design_weight = w[i];
    r.covariates = {1.0};
    d.records.push_back(r);
  }
  build_partitions(d);
  return d;
}

}  // namespace

TEST_SUITE("baseline_estimators") {

TEST_CASE("direct formula") {
  const auto d = one_domain({2, 4}, {5, 5});
  const auto e = direct_estimate(d, std::vector<double>{10.0});
  REQUIRE(e.size() == 1);
  CHECK(e[0].defined);
  CHECK(e[0].point == doctest::Approx(3.0));
  CHECK(e[0].n_responses == 2);
  CHECK(e[0].variant == DirectVariant::kHorvitzThompson);
  // sum w (w - 1) y^2 / N^2 = 20 (4 + 16) / 100
  CHECK(e[0].se == doctest::Approx(std::sqrt(4.0)));
}

TEST_CASE("empty domains are undefined") {
  const auto d = one_domain({2, 4}, {5, 5}, 2);
  const auto e = direct_estimate(d, std::vector<double>{10.0, 10.0});
  CHECK(e[0].defined);
  CHECK_FALSE(e[1].defined);
  CHECK(e[1].n_responses == 0);
}

TEST_CASE("self-weighting census") {
  const auto d = one_domain({1, 2, 3, 6}, {1, 1, 1, 1});
  const auto e = direct_estimate(d, std::vector<double>{4.0});
  CHECK(e[0].point == doctest::Approx(3.0));
  CHECK(e[0].se == 0.0);
  const auto h = direct_estimate(d, std::vector<double>{});
  CHECK(h[0].variant == DirectVariant::kHajek);
  CHECK(h[0].point == doctest::Approx(3.0));
  CHECK(h[0].se == 0.0);
}

TEST_CASE("constant responses") {
  const auto d = one_domain({2.5, 2.5, 2.5}, {3, 4, 10});
  const auto ht = direct_estimate(d, std::vector<double>{20.0});
  CHECK(ht[0].point == doctest::Approx(2.5 * 17.0 / 20.0));
  const auto hj = direct_estimate(d, std::vector<double>{});
  CHECK(hj[0].point == 2.5);
  CHECK(hj[0].se == 0.0);
}

TEST_CASE("HT point and variance are design-unbiased by enumeration") {
  // 10-unit population with unequal inclusion probabilities; all 2^10 samples.
  const std::vector<double> y = {1.2, 0.4, 3.1, 2.2, 0.0, 5.5, 1.1, 2.9, 4.4, 0.7};
  const std::vector<double> pi = {0.1, 0.3, 0.5, 0.2, 0.9, 0.6, 0.4, 0.35, 0.8, 0.15};
  const double N = 10.0;
  double truth = 0.0;
  for (double v : y) truth += v / N;
  double e_point = 0.0, e_point2 = 0.0, e_var = 0.0, total_p = 0.0;
  for (int mask = 0; mask < 1024; ++mask) {
    double p = 1.0;
    std::vector<double> ys, ws;
    for (int i = 0; i < 10; ++i) {
      if (mask & (1 << i)) {
        p *= pi[i];
        ys.push_back(y[i]);
        ws.push_back(1.0 / pi[i]);
      } else {
        p *= 1.0 - pi[i];
      }
    }
    total_p += p;
    double point = 0.0, var = 0.0;
    if (!ys.empty()) {
      const auto e = direct_estimate(one_domain(ys, ws), std::vector<double>{N});
      point = e[0].point;
      var = e[0].se * e[0].se;
    }
    e_point += p * point;
    e_point2 += p * point * point;
    e_var += p * var;
  }
  CHECK(total_p == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e_point == doctest::Approx(truth).epsilon(1e-12));
  CHECK(e_var == doctest::Approx(e_point2 - e_point * e_point).epsilon(1e-10));
}

TEST_CASE("direct estimates honour filters and cell totals") {
  const std::string csv =
      "unit_id,area,week,weight,response,x1,x2\n"
      "a,1,1,2,1.0,0,0\n"
      "b,1,1,2,3.0,1,0\n"
      "c,2,1,4,5.0,1,0\n";
  const auto d = tulm::testing::parse_panel(csv, tulm::testing::xy_schema());
  std::istringstream cells("area,week,x1,x2,count\n1,1,0,0,3\n1,1,1,0,5\n2,1,1,0,4\n");
  const auto c = ingest_cells(cells, tulm::testing::xy_schema());
  DomainFilter f;
  f.equals = {{"x1", 1.0}};
  const auto e = direct_estimate(d, c, f);
  CHECK(e[0].point == doctest::Approx(2.0 * 3.0 / 5.0));
  CHECK(e[1].point == doctest::Approx(5.0));
  const auto all = direct_estimate(d, c);
  CHECK(all[0].point == doctest::Approx((2.0 + 6.0) / 8.0));
}

TEST_CASE("week_subset") {
  tulm::testing::SimSpec s;
  s.mode = ResponseMode::kBinary;
  s.prev_yes = 1.0;
  RngStream r(1, 0);
  const auto d = tulm::testing::simulate_panel(s, r);
  const auto w = week_subset(d, 2);
  CHECK(w.n_weeks == 1);
  CHECK(w.size() == d.week_size(2));
  CHECK(w.followup[0].empty());
  CHECK_FALSE(w.has_prev_covariate);
  CHECK(w.p() == d.p() - 2);
  CHECK(w.weights_scaled);
}

TEST_CASE("identical weekly data give identical cross-sectional posteriors") {
  tulm::testing::SimSpec s;
  s.T = 1;
  RngStream r(2, 0);
  const auto one = tulm::testing::simulate_panel(s, r);
  PanelDataset two = one;
  two.n_weeks = 2;
  for (auto rec : one.records) {
    rec.unit_id += "_b";
    rec.week = 1;
    two.records.push_back(rec);
  }
  build_partitions(two);
  two = scale_weights(two);
  SamplerConfig cfg = SamplerConfig::gaussian_defaults();
  cfg.n_iter = 200;
  cfg.n_burn = 50;
  const auto draws = run_gbulm_per_week(two, cfg, RngStream(3, 0), 2);
  REQUIRE(draws.size() == 2);
  CHECK(draws[0].beta == draws[1].beta);
  CHECK(draws[0].sigma2 == draws[1].sigma2);
  CHECK(draws[1].first_week == 1);
  CHECK(draws[1].covers_week(1));
  CHECK_FALSE(draws[1].covers_week(0));
}

TEST_CASE("G-BULM recovers a cross-sectional model") {
  tulm::testing::SimSpec s;
  s.T = 1;
  s.m = 5;
  s.units_per_area_week = 80;
  s.sigma2 = 0.5;
  RngStream r(4, 0);
  const auto d = tulm::testing::simulate_panel(s, r);
  SamplerConfig cfg = SamplerConfig::gaussian_defaults();
  cfg.n_iter = 1500;
  cfg.n_burn = 500;
  const auto draws = run_gbulm_per_week(d, cfg, RngStream(5, 0));
  CHECK(draws[0].beta.col(1).mean() == doctest::Approx(1.0).epsilon(0.1));
  CHECK(draws[0].sigma2.mean() == doctest::Approx(0.5).epsilon(0.15));
}

TEST_CASE("normal critical value") {
  CHECK(normal_critical_value(0.05) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK_THROWS_AS(normal_critical_value(0.0), ConfigError);
}

}
