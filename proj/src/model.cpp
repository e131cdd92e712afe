#include "tulm/model.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "tulm/error.hpp"
#include "tulm/table.hpp"

namespace tulm {

SamplerConfig SamplerConfig::gaussian_defaults() { return SamplerConfig{}; }

SamplerConfig SamplerConfig::binary_defaults() {
  SamplerConfig c;
  c.n_iter = 8000;
  c.n_burn = 1000;
  return c;
}

void SamplerConfig::validate() const {
  if (n_iter <= 0 || n_burn < 0 || n_burn >= n_iter) {
    throw ConfigError("sampler requires 0 <= n_burn < n_iter");
  }
  if (thin <= 0) throw ConfigError("thin must be a positive integer");
  if (!(sigma2_beta > 0.0) || !(a > 0.0) || !(b > 0.0)) {
    throw ConfigError("sigma2_beta, a and b must be positive");
  }
  if (!(rho_proposal_halfwidth > 0.0)) throw ConfigError("rho proposal half-width must be positive");
  if (pg_truncation < 1) throw ConfigError("Polya-Gamma truncation must be >= 1");
}

void write_draws(const PosteriorDraws& d, std::ostream& out, char delimiter) {
  const bool gaussian = d.mode == ResponseMode::kGaussian;
  std::vector<std::string> header = {"iteration"};
  for (const auto& n : d.covariate_names) header.push_back("beta." + n);
  for (int t = 0; t < d.n_weeks; ++t) {
    for (int j = 0; j < d.n_areas; ++j) {
      header.push_back("eta." + std::to_string(d.first_week + t + 1) + "." + std::to_string(j + 1));
    }
  }
  if (gaussian) header.emplace_back("rho");
  header.emplace_back("phi");
  if (gaussian) header.emplace_back("sigma2");
  header.emplace_back("sigma2_eta1");
  header.emplace_back("sigma2_eta");
  write_row(out, header, delimiter);
  for (int k = 0; k < d.size(); ++k) {
    std::vector<std::string> row = {std::to_string(k + 1)};
    for (Eigen::Index c = 0; c < d.beta.cols(); ++c) row.push_back(format_double(d.beta(k, c)));
    for (Eigen::Index c = 0; c < d.eta.cols(); ++c) row.push_back(format_double(d.eta(k, c)));
    if (gaussian) row.push_back(format_double(d.rho[k]));
    row.push_back(format_double(d.phi[k]));
    if (gaussian) row.push_back(format_double(d.sigma2[k]));
    row.push_back(format_double(d.sigma2_eta1[k]));
    row.push_back(format_double(d.sigma2_eta[k]));
    write_row(out, row, delimiter);
  }
}

PosteriorDraws read_draws(std::istream& in, ResponseMode mode, int n_areas,
                          const std::string& source) {
  const Table t = parse_table(in, ',', source);
  PosteriorDraws d;
  d.mode = mode;
  d.n_areas = n_areas;
  std::vector<int> beta_cols;
  std::vector<int> eta_cols;
  int first_week = -1;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    const std::string& h = t.header[c];
    if (h.rfind("beta.", 0) == 0) {
      d.covariate_names.push_back(h.substr(5));
      beta_cols.push_back(static_cast<int>(c));
    } else if (h.rfind("eta.", 0) == 0) {
      if (first_week < 0) {
        const auto dot = h.find('.', 4);
        first_week = std::stoi(h.substr(4, dot - 4)) - 1;
      }
      eta_cols.push_back(static_cast<int>(c));
    }
  }
  if (n_areas <= 0 || eta_cols.size() % static_cast<std::size_t>(n_areas) != 0) {
    throw DataError(source + ": eta column count is not a multiple of n_areas");
  }
  d.first_week = std::max(first_week, 0);
  d.n_weeks = static_cast<int>(eta_cols.size()) / n_areas;
  const Eigen::Index nd = static_cast<Eigen::Index>(t.rows.size());
  d.beta.resize(nd, static_cast<Eigen::Index>(beta_cols.size()));
  d.eta.resize(nd, static_cast<Eigen::Index>(eta_cols.size()));
  auto col = [&](const char* name) { return t.require_column(name, source); };
  const bool gaussian = mode == ResponseMode::kGaussian;
  const int c_rho = gaussian ? col("rho") : -1;
  const int c_sigma2 = gaussian ? col("sigma2") : -1;
  const int c_phi = col("phi");
  const int c_s1 = col("sigma2_eta1");
  const int c_s = col("sigma2_eta");
  d.phi.resize(nd);
  d.sigma2_eta1.resize(nd);
  d.sigma2_eta.resize(nd);
  if (gaussian) {
    d.rho.resize(nd);
    d.sigma2.resize(nd);
  }
  auto num = [&](std::size_t row, int c) {
    try {
      return std::stod(t.rows[row][c]);
    } catch (const std::exception&) {
      std::ostringstream os;
      os << source << ":" << t.line_numbers[row] << ": malformed value '" << t.rows[row][c] << "'";
      throw DataError(os.str());
    }
  };
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto k = static_cast<Eigen::Index>(r);
    for (std::size_t c = 0; c < beta_cols.size(); ++c) d.beta(k, c) = num(r, beta_cols[c]);
    for (std::size_t c = 0; c < eta_cols.size(); ++c) d.eta(k, c) = num(r, eta_cols[c]);
    d.phi[k] = num(r, c_phi);
    d.sigma2_eta1[k] = num(r, c_s1);
    d.sigma2_eta[k] = num(r, c_s);
    if (gaussian) {
      d.rho[k] = num(r, c_rho);
      d.sigma2[k] = num(r, c_sigma2);
    }
  }
  return d;
}

PanelDesign PanelDesign::from(const PanelDataset& data) {
  if (!data.weights_scaled) throw DataError("sampler requires scaled weights (run scale_weights)");
  PanelDesign d;
  d.n = static_cast<int>(data.records.size());
  d.p = data.p();
  d.m = data.n_areas;
  d.T = data.n_weeks;
  d.y.resize(d.n);
  d.w.resize(d.n);
  d.trials.resize(d.n);
  d.X.resize(d.n, d.p);
  d.area.resize(d.n);
  d.week.resize(d.n);
  d.prev.resize(d.n);
  d.by_week.assign(d.T, {});
  d.followups_from.assign(d.T, {});
  for (int i = 0; i < d.n; ++i) {
    const auto& r = data.records[i];
    if (static_cast<int>(r.covariates.size()) != d.p) {
      throw DataError("record covariate length does not match the design (unit '" + r.unit_id + "')");
    }
    d.y[i] = r.response;
    d.w[i] = r.scaled_weight;
    d.trials[i] = r.trials;
    for (int k = 0; k < d.p; ++k) d.X(i, k) = r.covariates[k];
    d.area[i] = r.area;
    d.week[i] = r.week;
    d.prev[i] = r.prev_index;
    d.by_week[r.week].push_back(i);
    d.total_weight += r.scaled_weight;
    if (r.prev_index >= 0) {
      d.followups_from[data.records[r.prev_index].week].push_back(i);
      d.followup_weight += r.scaled_weight;
    }
  }
  return d;
}

double log_inverse_gamma_density(double x, double a, double b) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

namespace area_effects {

double prior_precision(int t, int T, double phi, double sigma2_eta1, double sigma2_eta) {
  double q = t == 0 ? 1.0 / sigma2_eta1 : 1.0 / sigma2_eta;
  if (t + 1 < T) q += phi * phi / sigma2_eta;
  return q;
}

Eigen::VectorXd prior_linear(int t, const Eigen::MatrixXd& eta, double phi, double sigma2_eta) {
  const int T = static_cast<int>(eta.rows());
  Eigen::VectorXd h = Eigen::VectorXd::Zero(eta.cols());
  if (t > 0) h += (phi / sigma2_eta) * eta.row(t - 1).transpose();
  if (t + 1 < T) h += (phi / sigma2_eta) * eta.row(t + 1).transpose();
  return h;
}

PhiConditional phi_conditional(const Eigen::MatrixXd& eta, double sigma2_eta) {
  double s01 = 0.0;
  double s00 = 0.0;
  for (Eigen::Index t = 1; t < eta.rows(); ++t) {
    s01 += eta.row(t).dot(eta.row(t - 1));
    s00 += eta.row(t - 1).squaredNorm();
  }
  PhiConditional c;
  if (s00 > 0.0) {
    c.mean = s01 / s00;
    c.var = sigma2_eta / s00;
    c.flat = false;
  }
  return c;
}

double draw_phi(const Eigen::MatrixXd& eta, double sigma2_eta, RngStream& rng) {
  const PhiConditional c = phi_conditional(eta, sigma2_eta);
  if (c.flat) return -1.0 + 2.0 * rng.uniform();
  return draw_truncated_normal(c.mean, c.var, -1.0, 1.0, rng);
}

double draw_sigma2_eta1(const Eigen::MatrixXd& eta, double a, double b, RngStream& rng) {
  const double m = static_cast<double>(eta.cols());
  return draw_inverse_gamma(a + m / 2.0, b + 0.5 * eta.row(0).squaredNorm(), rng);
}

double draw_sigma2_eta(const Eigen::MatrixXd& eta, double phi, double a, double b,
                       RngStream& rng) {
  const double m = static_cast<double>(eta.cols());
  const double T = static_cast<double>(eta.rows());
  double ss = 0.0;
  for (Eigen::Index t = 1; t < eta.rows(); ++t) {
    ss += (eta.row(t) - phi * eta.row(t - 1)).squaredNorm();
  }
  return draw_inverse_gamma(a + m * (T - 1.0) / 2.0, b + 0.5 * ss, rng);
}

double log_prior(const Eigen::MatrixXd& eta, double phi, double sigma2_eta1, double sigma2_eta,
                 double a, double b) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (!(phi > -1.0 && phi < 1.0) || !(sigma2_eta1 > 0.0) || !(sigma2_eta > 0.0)) return kNegInf;
  const double m = static_cast<double>(eta.cols());
  double lp = -0.5 * m * std::log(sigma2_eta1) - 0.5 * eta.row(0).squaredNorm() / sigma2_eta1;
  for (Eigen::Index t = 1; t < eta.rows(); ++t) {
    lp += -0.5 * m * std::log(sigma2_eta) -
          0.5 * (eta.row(t) - phi * eta.row(t - 1)).squaredNorm() / sigma2_eta;
  }
  lp += log_inverse_gamma_density(sigma2_eta1, a, b) + log_inverse_gamma_density(sigma2_eta, a, b);
  return lp;
}

}  // namespace area_effects
}  // namespace tulm
