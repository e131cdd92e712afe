#include "tulm/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include "tulm/error.hpp"
#include "tulm/parallel.hpp"
#include "tulm/table.hpp"

namespace tulm {

double empirical_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw DataError("quantile of an empty draw set");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

DomainEstimate summarize_draws(const std::vector<double>& values, double alpha) {
  if (values.empty()) throw DataError("cannot summarize an empty draw set");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  DomainEstimate e;
  const double n = static_cast<double>(values.size());
  e.n_draws = static_cast<int>(values.size());
  e.point = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - e.point) * (v - e.point);
  e.sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  e.ci_lower = empirical_quantile(sorted, alpha / 2.0);
  e.ci_upper = empirical_quantile(sorted, 1.0 - alpha / 2.0);
  return e;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct ChainLayout {
  std::vector<int> chain_of_week;  // -1 when no chain covers the week
  int n_draws = 0;
  bool prev_terms = false;
  int p_base = 0;
};

ChainLayout layout(const std::vector<PosteriorDraws>& draws, const PopulationCells& cells) {
  ChainLayout L;
  L.chain_of_week.assign(cells.n_weeks, -1);
  L.p_base = static_cast<int>(cells.covariate_names.size());
  bool first = true;
  for (std::size_t c = 0; c < draws.size(); ++c) {
    const PosteriorDraws& d = draws[c];
    if (d.size() == 0) continue;
    const auto& names = d.covariate_names;
    const bool prefix = names.size() >= cells.covariate_names.size() &&
                        std::equal(cells.covariate_names.begin(), cells.covariate_names.end(),
                                   names.begin());
    const bool with_prev = prefix && names.size() == cells.covariate_names.size() + 2 &&
                           names[names.size() - 2] == kPrevNoName &&
                           names[names.size() - 1] == kPrevYesName;
    if (!prefix || !(with_prev || names.size() == cells.covariate_names.size())) {
      throw DataError("covariate encoding of the draws does not match the population cells");
    }
    if (d.n_areas < cells.n_areas) throw DataError("draws cover fewer areas than the cells");
    if (first) {
      L.n_draws = d.size();
      L.prev_terms = with_prev;
      first = false;
    } else if (d.size() != L.n_draws || with_prev != L.prev_terms) {
      throw DataError("per-week chains must share draw counts and covariate encoding");
    }
    for (int t = d.first_week; t < d.first_week + d.n_weeks && t < cells.n_weeks; ++t) {
      if (L.chain_of_week[t] < 0) L.chain_of_week[t] = static_cast<int>(c);
    }
  }
  if (first) throw DataError("no posterior draws to predict from");
  for (const auto& cell : cells.cells) {
    if (L.chain_of_week[cell.week] < 0) {
      std::ostringstream os;
      os << "no posterior draws cover week " << cell.week + 1;
      throw DataError(os.str());
    }
    if (static_cast<int>(cell.covariates.size()) != L.p_base) {
      throw DataError("cell covariate length does not match the cell header");
    }
  }
  return L;
}

double linear_part(const PosteriorDraws& d, int k, const std::vector<double>& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += d.beta(k, static_cast<Eigen::Index>(i)) * x[i];
  return s;
}

DomainPrediction summarize(const Eigen::MatrixXd& per_draw, const std::vector<char>& has_cells,
                           int m, int T, double alpha) {
  DomainPrediction out;
  out.n_areas = m;
  out.n_weeks = T;
  out.per_draw = per_draw;
  out.estimates.resize(static_cast<std::size_t>(m) * T);
  std::vector<double> col(per_draw.rows());
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < m; ++j) {
      const std::size_t k = static_cast<std::size_t>(t) * m + j;
      DomainEstimate e;
      bool finite = has_cells[k] != 0 && per_draw.rows() > 0;
      for (Eigen::Index r = 0; finite && r < per_draw.rows(); ++r) {
        col[r] = per_draw(r, static_cast<Eigen::Index>(k));
        finite = std::isfinite(col[r]);
      }
      if (finite) {
        e = summarize_draws(col, alpha);
      } else {
        e.point = e.sd = e.ci_lower = e.ci_upper = kNaN;
        e.n_draws = 0;
      }
      e.area = j;
      e.week = t;
      out.estimates[k] = e;
    }
  }
  return out;
}

}  // namespace

DomainPrediction predict_gaussian_domains(const std::vector<PosteriorDraws>& draws,
                                          const PopulationCells& cells, const RngStream& rng,
                                          const PredictionOptions& options) {
  const ChainLayout L = layout(draws, cells);
  for (const auto& d : draws) {
    if (d.size() > 0 && (d.mode != ResponseMode::kGaussian || d.sigma2.size() != d.size())) {
      throw DataError("gaussian prediction needs gaussian draws with sigma2");
    }
  }
  const int m = cells.n_areas;
  const int T = cells.n_weeks;
  const std::size_t nd = static_cast<std::size_t>(m) * T;
  const auto resolved = options.filter.resolve(cells.covariate_names);
  std::vector<char> has_cells(nd, 0);
  for (const auto& c : cells.cells) {
    if (matches(resolved, c.covariates)) has_cells[static_cast<std::size_t>(c.week) * m + c.area] = 1;
  }
  Eigen::MatrixXd per_draw(L.n_draws, static_cast<Eigen::Index>(nd));
  parallel_for(L.n_draws, options.threads, [&](int k) {
    RngStream local = rng.split(static_cast<std::uint64_t>(k));
    std::vector<double> num(nd, 0.0), den(nd, 0.0);
    for (const auto& c : cells.cells) {
      if (!matches(resolved, c.covariates)) continue;
      const PosteriorDraws& d = draws[L.chain_of_week[c.week]];
      const double mu = linear_part(d, k, c.covariates) + d.eta_at(k, c.week, c.area);
      const double total = c.count * mu + std::sqrt(c.count * d.sigma2[k]) * local.normal();
      const std::size_t idx = static_cast<std::size_t>(c.week) * m + c.area;
      num[idx] += total;
      den[idx] += c.count;
    }
    for (std::size_t i = 0; i < nd; ++i) {
      per_draw(k, static_cast<Eigen::Index>(i)) = den[i] > 0.0 ? num[i] / den[i] : kNaN;
    }
  });
  return summarize(per_draw, has_cells, m, T, options.alpha);
}

DomainPrediction predict_binary_domains(const std::vector<PosteriorDraws>& draws,
                                        const PopulationCells& cells, const RngStream& rng,
                                        const PredictionOptions& options) {
  const ChainLayout L = layout(draws, cells);
  for (const auto& d : draws) {
    if (d.size() > 0 && d.mode != ResponseMode::kBinary) {
      throw DataError("binary prediction needs binary draws");
    }
  }
  const int m = cells.n_areas;
  const int T = cells.n_weeks;
  const std::size_t nd = static_cast<std::size_t>(m) * T;
  const std::size_t nc = cells.cells.size();
  const auto resolved = options.filter.resolve(cells.covariate_names);

  // Processing order: by week, input order within a week.
  std::vector<int> order(nc);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return cells.cells[a].week < cells.cells[b].week;
  });

  // Predecessor cell for carry-forward splitting.
  std::vector<int> pred(nc, -1);
  if (L.prev_terms) {
    std::map<std::tuple<int, int, std::vector<double>>, int> index;
    for (std::size_t i = 0; i < nc; ++i) {
      const auto& c = cells.cells[i];
      if (c.prev_status) continue;
      if (!index.emplace(std::make_tuple(c.week, c.area, c.covariates), static_cast<int>(i)).second) {
        std::ostringstream os;
        os << "duplicate population cell in area " << c.area + 1 << ", week " << c.week + 1;
        throw DataError(os.str());
      }
    }
    for (std::size_t i = 0; i < nc; ++i) {
      const auto& c = cells.cells[i];
      if (c.prev_status || c.week == 0) continue;
      const auto it = index.find(std::make_tuple(c.week - 1, c.area, c.covariates));
      if (it != index.end()) pred[i] = it->second;
    }
  }

  std::vector<char> has_cells(nd, 0);
  for (const auto& c : cells.cells) {
    if (matches(resolved, c.covariates)) has_cells[static_cast<std::size_t>(c.week) * m + c.area] = 1;
  }
  const int pb = L.p_base;
  Eigen::MatrixXd per_draw(L.n_draws, static_cast<Eigen::Index>(nd));
  parallel_for(L.n_draws, options.threads, [&](int k) {
    RngStream local = rng.split(static_cast<std::uint64_t>(k));
    std::vector<std::int64_t> trials(nc, 0), yes(nc, 0);
    std::vector<double> num(nd, 0.0), den(nd, 0.0);
    for (int i : order) {
      const auto& c = cells.cells[i];
      const PosteriorDraws& d = draws[L.chain_of_week[c.week]];
      const double whole = std::floor(c.count);
      std::int64_t n = static_cast<std::int64_t>(whole);
      if (c.count > whole && local.uniform() < c.count - whole) ++n;
      trials[i] = n;
      const double base = linear_part(d, k, c.covariates) + d.eta_at(k, c.week, c.area);
      std::int64_t y = 0;
      if (!L.prev_terms) {
        y = local.binomial(n, logistic(base));
      } else {
        const double b_no = d.beta(k, pb);
        const double b_yes = d.beta(k, pb + 1);
        auto xi = [&](PrevStatus s) {
          switch (s) {
            case PrevStatus::kPrevNo: return logistic(base + b_no);
            case PrevStatus::kPrevYes: return logistic(base + b_yes);
            default: return logistic(base);
          }
        };
        if (c.prev_status) {
          y = local.binomial(n, xi(*c.prev_status));
        } else if (pred[i] < 0 || trials[pred[i]] == 0) {
          y = local.binomial(n, xi(PrevStatus::kNotSampled));
        } else {
          const std::int64_t np = trials[pred[i]];
          const std::int64_t nyp = yes[pred[i]];
          const std::int64_t n_yes_prev =
              n == np ? nyp : local.binomial(n, static_cast<double>(nyp) / static_cast<double>(np));
          y = local.binomial(n_yes_prev, xi(PrevStatus::kPrevYes)) +
              local.binomial(n - n_yes_prev, xi(PrevStatus::kPrevNo));
        }
      }
      yes[i] = y;
      if (!matches(resolved, c.covariates)) continue;
      const std::size_t idx = static_cast<std::size_t>(c.week) * m + c.area;
      num[idx] += static_cast<double>(y);
      den[idx] += static_cast<double>(n);
    }
    for (std::size_t i = 0; i < nd; ++i) {
      per_draw(k, static_cast<Eigen::Index>(i)) = den[i] > 0.0 ? num[i] / den[i] : kNaN;
    }
  });
  return summarize(per_draw, has_cells, m, T, options.alpha);
}

void write_domain_estimates(const DomainPrediction& pred, std::ostream& out, char delimiter) {
  write_row(out, {"area", "week", "point", "sd", "ci_lower", "ci_upper", "n_draws"}, delimiter);
  for (const auto& e : pred.estimates) {
    write_row(out,
              {std::to_string(e.area + 1), std::to_string(e.week + 1), format_double(e.point),
               format_double(e.sd), format_double(e.ci_lower), format_double(e.ci_upper),
               std::to_string(e.n_draws)},
              delimiter);
  }
}

void write_domain_draws(const DomainPrediction& pred, std::ostream& out, char delimiter) {
  std::vector<std::string> header = {"draw"};
  for (int t = 0; t < pred.n_weeks; ++t) {
    for (int j = 0; j < pred.n_areas; ++j) {
      header.push_back("domain." + std::to_string(t + 1) + "." + std::to_string(j + 1));
    }
  }
  write_row(out, header, delimiter);
  for (Eigen::Index k = 0; k < pred.per_draw.rows(); ++k) {
    std::vector<std::string> row = {std::to_string(k + 1)};
    for (Eigen::Index c = 0; c < pred.per_draw.cols(); ++c) row.push_back(format_double(pred.per_draw(k, c)));
    write_row(out, row, delimiter);
  }
}

}  // namespace tulm
