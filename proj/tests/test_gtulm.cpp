#include <doctest.h>

#include <cmath>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "sim.hpp"
#include "support.hpp"
#include "tulm/baseline.hpp"
#include "tulm/error.hpp"
#include "tulm/gtulm.hpp"

using namespace tulm;
using tulm::testing::SimSpec;
using tulm::testing::simulate_panel;

namespace {

PanelDataset small_gaussian(std::uint64_t seed, bool unit_weights = false) {
  SimSpec s;
  s.unit_weights = unit_weights;
  RngStream r(seed, 0);
  return simulate_panel(s, r);
}

GtulmState random_state(const PanelDesign& d, std::uint64_t seed) {
  RngStream r(seed, 1);
  GtulmState s = GtulmState::initial(d.p, d.m, d.T);
  for (int k = 0; k < d.p; ++k) s.beta(k) = 0.3 * r.normal();
  for (int t = 0; t < d.T; ++t)
    for (int j = 0; j < d.m; ++j) s.eta(t, j) = 0.4 * r.normal();
  s.rho = 0.4;
  s.phi = 0.5;
  s.sigma2 = 0.8;
  s.sigma2_eta1 = 0.6;
  s.sigma2_eta = 0.3;
  return s;
}

// Gradient and Hessian of f at x by central differences.
void numeric_quadratic(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                       Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
  const int p = static_cast<int>(x.size());
  const double h = 1e-3;
  grad.resize(p);
  hess.resize(p, p);
  for (int i = 0; i < p; ++i) {
    Eigen::VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    grad(i) = (f(a) - f(b)) / (2 * h);
    for (int j = 0; j < p; ++j) {
      Eigen::VectorXd pp = x, pm = x, mp = x, mm = x;
      pp(i) += h; pp(j) += h;
      pm(i) += h; pm(j) -= h;
      mp(i) -= h; mp(j) += h;
      mm(i) -= h; mm(j) -= h;
      hess(i, j) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h * h);
    }
  }
}

}  // namespace

TEST_SUITE("gtulm_sampler") {

TEST_CASE("beta conditional matches the joint density") {
  const auto data = small_gaussian(1);
  const auto design = PanelDesign::from(data);
  const SamplerConfig cfg = SamplerConfig::gaussian_defaults();
  GtulmSampler sampler(design, cfg);
  const GtulmState s0 = random_state(design, 2);
  sampler.set_state(s0);
  const PrecisionGaussian g = sampler.beta_conditional();
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  numeric_quadratic(
      [&](const Eigen::VectorXd& b) {
        GtulmState s = s0;
        s.beta = b;
        return gtulm_log_pseudo_posterior(s, design, cfg);
      },
      s0.beta, grad, hess);
  const Eigen::MatrixXd Q = -hess;
  const Eigen::VectorXd mean = s0.beta + Q.ldlt().solve(grad);
  CHECK((g.precision - Q).norm() / Q.norm() < 1e-5);
  CHECK((precision_gaussian_mean(g) - mean).norm() < 1e-5);
}

TEST_CASE("eta conditional matches the joint density") {
  const auto data = small_gaussian(3);
  const auto design = PanelDesign::from(data);
  const SamplerConfig cfg = SamplerConfig::gaussian_defaults();
  GtulmSampler sampler(design, cfg);
  const GtulmState s0 = random_state(design, 4);
  sampler.set_state(s0);
  for (int t = 0; t < design.T; ++t) {
    const auto [q, h] = sampler.eta_conditional(t);
    for (int j = 0; j < design.m; ++j) {
      CAPTURE(t);
      CAPTURE(j);
      Eigen::VectorXd grad;
      Eigen::MatrixXd hess;
      numeric_quadratic(
          [&](const Eigen::VectorXd& v) {
            GtulmState s = s0;
            s.eta(t, j) = v(0);
            return gtulm_log_pseudo_posterior(s, design, cfg);
          },
          Eigen::VectorXd::Constant(1, s0.eta(t, j)), grad, hess);
      const double prec = -hess(0, 0);
      CHECK(q(j) == doctest::Approx(prec).epsilon(1e-5));
      CHECK(h(j) / q(j) == doctest::Approx(s0.eta(t, j) + grad(0) / prec).epsilon(1e-5));
    }
  }
}

TEST_CASE("sigma2 conditional is the inverse gamma of the joint") {
  const auto data = small_gaussian(5);
  const auto design = PanelDesign::from(data);
  const SamplerConfig cfg = SamplerConfig::gaussian_defaults();
  GtulmSampler sampler(design, cfg);
  const GtulmState s0 = random_state(design, 6);
  sampler.set_state(s0);
  const auto [shape, rate] = sampler.sigma2_conditional();
  auto ig = [&](double x) { return -(shape + 1) * std::log(x) - rate / x; };
  const double base = gtulm_full_conditional_logdensity(GtulmParam::kSigma2, 1.0, s0, design, cfg);
  for (double v : {0.3, 0.7, 1.9, 4.0}) {
    const double lhs = gtulm_full_conditional_logdensity(GtulmParam::kSigma2, v, s0, design, cfg) - base;
    CHECK(lhs == doctest::Approx(ig(v) - ig(1.0)).epsilon(1e-9));
  }
  CHECK(shape == doctest::Approx(cfg.a + design.total_weight / 2));
}

TEST_CASE("rho conditional agrees with the joint and is flat without follow-ups") {
  const auto data = small_gaussian(7);
  const auto design = PanelDesign::from(data);
  const SamplerConfig cfg = SamplerConfig::gaussian_defaults();
  GtulmSampler sampler(design, cfg);
  const GtulmState s0 = random_state(design, 8);
  sampler.set_state(s0);
  const double base_joint = gtulm_full_conditional_logdensity(GtulmParam::kRho, 0.0, s0, design, cfg);
  const double base_cond = sampler.rho_log_conditional(0.0);
  for (double r : {-0.9, -0.3, 0.2, 0.8, 0.97}) {
    const double joint = gtulm_full_conditional_logdensity(GtulmParam::kRho, r, s0, design, cfg);
    CHECK(joint - base_joint == doctest::Approx(sampler.rho_log_conditional(r) - base_cond).epsilon(1e-9));
  }
  CHECK(std::isinf(sampler.rho_log_conditional(1.0)));
  CHECK(std::isinf(sampler.rho_log_conditional(-1.2)));

  // one week only: no follow-ups
  const auto one = week_subset(data, 0);
  GtulmSampler flat(PanelDesign::from(one), cfg);
  CHECK(flat.rho_log_conditional(-0.8) == doctest::Approx(flat.rho_log_conditional(0.6)));
}

TEST_CASE("follow-up likelihood with rho = 0 is the first-time form") {
  const auto data = small_gaussian(9);
  const auto design = PanelDesign::from(data);
  GtulmState s = random_state(design, 10);
  s.rho = 0.0;
  int checked = 0;
  for (int r = 0; r < design.n; ++r) {
    if (design.prev[r] < 0) continue;
    const double mu = design.X.row(r).dot(s.beta) + s.eta(design.week[r], design.area[r]);
    const double e = design.y(r) - mu;
    const double expected = design.w(r) * (-0.5 * std::log(2 * M_PI * s.sigma2) - e * e / (2 * s.sigma2));
    CHECK(gtulm_record_loglik(s, design, r) == doctest::Approx(expected).epsilon(1e-12));
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("Metropolis rho step respects the support") {
  const auto data = small_gaussian(11);
  const auto design = PanelDesign::from(data);
  SamplerConfig cfg = SamplerConfig::gaussian_defaults();
  cfg.rho_proposal_halfwidth = 0.5;
  GtulmState s = random_state(design, 12);
  s.rho = 0.98;
  RngStream r(13, 0);
  for (int k = 0; k < 2000; ++k) {
    const auto res = metropolis_rho_step(s, design, cfg, r);
    REQUIRE(res.rho > -1.0);
    REQUIRE(res.rho < 1.0);
    if (!res.accepted) CHECK(res.rho == s.rho);
    s.rho = res.rho;
  }
  SamplerConfig zero = cfg;
  zero.rho_proposal_halfwidth = 1e-300;
  GtulmState z = random_state(design, 14);
  for (int k = 0; k < 100; ++k) CHECK(metropolis_rho_step(z, design, zero, r).accepted);
}

TEST_CASE("single-site updates follow their full conditionals") {
  // KS between many single-site draws from a fixed state and the
  // grid-normalized full conditional of the joint density.
  const auto data = small_gaussian(15);
  const auto design = PanelDesign::from(data);
  const SamplerConfig cfg = SamplerConfig::gaussian_defaults();
  const GtulmState s0 = random_state(design, 16);
  struct Target {
    GtulmParam param;
    double lo, hi;
  };
  for (Target tg : {Target{GtulmParam::kPhi, -1.0, 1.0}, Target{GtulmParam::kSigma2, 1e-3, 6.0},
                    Target{GtulmParam::kSigma2Eta1, 1e-3, 8.0}, Target{GtulmParam::kSigma2Eta, 1e-3, 6.0}}) {
    CAPTURE(to_string(tg.param));
    const int G = 20000;
    std::vector<double> grid(G + 1), cdf(G + 1, 0.0);
    std::vector<double> logf(G + 1);
    double peak = -1e300;
    for (int i = 0; i <= G; ++i) {
      grid[i] = tg.lo + (tg.hi - tg.lo) * i / G;
      logf[i] = gtulm_full_conditional_logdensity(tg.param, grid[i], s0, design, cfg);
      if (std::isfinite(logf[i])) peak = std::max(peak, logf[i]);
    }
    for (int i = 1; i <= G; ++i) {
      const double a = std::isfinite(logf[i - 1]) ? std::exp(logf[i - 1] - peak) : 0.0;
      const double b = std::isfinite(logf[i]) ? std::exp(logf[i] - peak) : 0.0;
      cdf[i] = cdf[i - 1] + 0.5 * (a + b) * (grid[i] - grid[i - 1]);
    }
    for (auto& c : cdf) c /= cdf.back();
    auto F = [&](double x) {
      if (x <= tg.lo) return 0.0;
      if (x >= tg.hi) return 1.0;
      const double pos = (x - tg.lo) / (tg.hi - tg.lo) * G;
      const int i = std::min(G - 1, static_cast<int>(pos));
      return cdf[i] + (cdf[i + 1] - cdf[i]) * (pos - i);
    };
    GtulmSampler sampler(design, cfg);
    RngStream r(17, static_cast<int>(tg.param));
    std::vector<double> x(20000);
    for (auto& v : x) {
      sampler.set_state(s0);
      switch (tg.param) {
        case GtulmParam::kPhi: sampler.step_phi(r); v = sampler.state().phi; break;
        case GtulmParam::kSigma2: sampler.step_sigma2(r); v = sampler.state().sigma2; break;
        case GtulmParam::kSigma2Eta1: sampler.step_sigma2_eta1(r); v = sampler.state().sigma2_eta1; break;
        case GtulmParam::kSigma2Eta: sampler.step_sigma2_eta(r); v = sampler.state().sigma2_eta; break;
        default: break;
      }
    }
    CHECK(tulm::testing::ks_distance(x, F) < 0.02);
  }
}

TEST_CASE("run_gtulm is deterministic and retains the configured draws") {
  const auto data = small_gaussian(18);
  SamplerConfig cfg = SamplerConfig::gaussian_defaults();
  cfg.n_iter = 300;
  cfg.n_burn = 100;
  cfg.thin = 3;
  RngStream a(19, 0), b(19, 0);
  const auto d1 = run_gtulm(data, cfg, a);
  const auto d2 = run_gtulm(data, cfg, b);
  CHECK(d1.size() == cfg.retained());
  CHECK(d1.size() == 67);
  CHECK(d1.beta == d2.beta);
  CHECK(d1.eta == d2.eta);
  CHECK(d1.rho == d2.rho);
  CHECK(d1.rho_acceptance > 0.0);
  CHECK(d1.rho_acceptance <= 1.0);
  for (int k = 0; k < d1.size(); ++k) {
    REQUIRE(std::fabs(d1.rho(k)) < 1.0);
    REQUIRE(std::fabs(d1.phi(k)) < 1.0);
    REQUIRE(d1.sigma2(k) > 0.0);
  }
}

TEST_CASE("unscaled weights are rejected") {
  SimSpec s;
  RngStream r(20, 0);
  auto d = simulate_panel(s, r);
  d.weights_scaled = false;
  CHECK_THROWS_AS(GtulmSampler(d, SamplerConfig::gaussian_defaults()), DataError);
  SamplerConfig bad;
  bad.n_burn = bad.n_iter;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("all-zero data keeps the fitted means near zero") {
  SimSpec s;
  RngStream r(21, 0);
  auto d = simulate_panel(s, r);
  for (auto& rec : d.records) {
    rec.response = 0.0;
    rec.covariates[1] = 0.0;
    if (rec.prev_response) rec.prev_response = 0.0;
  }
  SamplerConfig cfg = SamplerConfig::gaussian_defaults();
  cfg.n_iter = 1500;
  cfg.n_burn = 500;
  RngStream c(22, 0);
  const auto draws = run_gtulm(d, cfg, c);
  // the intercept alone trades off against eta; the cell means are identified
  for (int t = 0; t < d.n_weeks; ++t) {
    for (int j = 0; j < d.n_areas; ++j) {
      double mu = 0.0;
      for (int k = 0; k < draws.size(); ++k) mu += draws.beta(k, 0) + draws.eta_at(k, t, j);
      CHECK(std::fabs(mu / draws.size()) < 0.1);
    }
  }
  CHECK(draws.sigma2.mean() < 0.2);
}

}
