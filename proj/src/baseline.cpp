#include "tulm/baseline.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include <boost/math/distributions/normal.hpp>

#include "tulm/btulm.hpp"
#include "tulm/error.hpp"
#include "tulm/gtulm.hpp"
#include "tulm/parallel.hpp"
#include "tulm/table.hpp"

namespace tulm {

const char* to_string(DirectVariant v) {
  return v == DirectVariant::kHorvitzThompson ? "horvitz_thompson" : "hajek";
}

double normal_critical_value(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  return boost::math::quantile(boost::math::complement(boost::math::normal(), alpha / 2.0));
}

std::vector<DirectEstimate> direct_estimate(const PanelDataset& data,
                                            const std::vector<double>& domain_sizes,
                                            const DomainFilter& filter) {
  const int m = data.n_areas;
  const int T = data.n_weeks;
  const std::size_t nd = static_cast<std::size_t>(m) * T;
  if (!domain_sizes.empty() && domain_sizes.size() != nd) {
    throw DataError("domain size table does not match n_areas x n_weeks");
  }
  const auto resolved = filter.resolve(data.covariate_names);
  std::vector<double> sw(nd, 0.0), swy(nd, 0.0);
  std::vector<int> count(nd, 0);
  std::vector<double> first(nd, 0.0);
  std::vector<char> constant(nd, 1);
  for (const auto& r : data.records) {
    if (!matches(resolved, r.covariates)) continue;
    const std::size_t k = static_cast<std::size_t>(r.week) * m + r.area;
    if (count[k] == 0) first[k] = r.response;
    else if (r.response != first[k]) constant[k] = 0;
    sw[k] += r.design_weight;
    swy[k] += r.design_weight * r.response;
    ++count[k];
  }
  // Poisson-sampling variance: uncentered for HT, linearized ratio form for Hajek
  std::vector<double> sv_ht(nd, 0.0), sv_hajek(nd, 0.0);
  for (const auto& r : data.records) {
    if (!matches(resolved, r.covariates)) continue;
    const std::size_t k = static_cast<std::size_t>(r.week) * m + r.area;
    const double ww = r.design_weight * (r.design_weight - 1.0);
    sv_ht[k] += ww * r.response * r.response;
    if (constant[k]) continue;
    const double e = r.response - swy[k] / sw[k];
    sv_hajek[k] += ww * e * e;
  }
  std::vector<DirectEstimate> out(nd);
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < m; ++j) {
      const std::size_t k = static_cast<std::size_t>(t) * m + j;
      DirectEstimate& d = out[k];
      d.area = j;
      d.week = t;
      d.n_responses = count[k];
      const double N = domain_sizes.empty() ? std::numeric_limits<double>::quiet_NaN() : domain_sizes[k];
      d.variant = std::isnan(N) ? DirectVariant::kHajek : DirectVariant::kHorvitzThompson;
      if (count[k] == 0) {
        d.defined = false;
        d.point = std::numeric_limits<double>::quiet_NaN();
        d.se = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      const double denom = d.variant == DirectVariant::kHajek ? sw[k] : N;
      if (!(denom > 0.0)) {
        d.defined = false;
        d.point = std::numeric_limits<double>::quiet_NaN();
        d.se = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      d.defined = true;
      d.point = swy[k] / denom;
      const double v = d.variant == DirectVariant::kHajek ? sv_hajek[k] : sv_ht[k];
      d.se = std::sqrt(std::max(0.0, v)) / denom;
    }
  }
  return out;
}

std::vector<DirectEstimate> direct_estimate(const PanelDataset& data, const PopulationCells& cells,
                                            const DomainFilter& filter) {
  if (cells.covariate_names != std::vector<std::string>(data.covariate_names.begin(),
                                                        data.covariate_names.begin() +
                                                            (data.p() - (data.has_prev_covariate ? 2 : 0)))) {
    throw DataError("cell covariates do not match the microdata design columns");
  }
  const auto resolved = filter.resolve(cells.covariate_names);
  const int m = data.n_areas;
  std::vector<double> sizes(static_cast<std::size_t>(m) * data.n_weeks, 0.0);
  for (const auto& c : cells.cells) {
    if (c.area >= m || c.week >= data.n_weeks || !matches(resolved, c.covariates)) continue;
    sizes[static_cast<std::size_t>(c.week) * m + c.area] += c.count;
  }
  return direct_estimate(data, sizes, filter);
}

PanelDataset week_subset(const PanelDataset& data, int week, bool drop_prev) {
  if (week < 0 || week >= data.n_weeks) throw ConfigError("week index out of range");
  PanelDataset out;
  out.mode = data.mode;
  out.n_areas = data.n_areas;
  out.n_weeks = 1;
  out.covariate_names = data.covariate_names;
  const bool strip = drop_prev && data.has_prev_covariate;
  if (strip) out.covariate_names.resize(out.covariate_names.size() - 2);
  out.has_prev_covariate = data.has_prev_covariate && !strip;
  out.weights_scaled = data.weights_scaled;
  for (const auto& r : data.records) {
    if (r.week != week) continue;
    UnitWeekRecord c = r;
    c.week = 0;
    c.prev_index = -1;
    c.prev_response.reset();
    if (strip) {
      c.covariates.resize(c.covariates.size() - 2);
      c.prev_status = PrevStatus::kNotSampled;
    }
    out.records.push_back(std::move(c));
  }
  for (const auto& [unit, w] : data.nonresponse) {
    if (w == week) out.nonresponse.emplace_back(unit, 0);
  }
  build_partitions(out);
  return out;
}

namespace {

template <typename Fit>
std::vector<PosteriorDraws> per_week(const PanelDataset& data, const SamplerConfig& config,
                                     const RngStream& rng, int threads, Fit fit) {
  config.validate();
  const PanelDataset scaled = data.weights_scaled ? data : scale_weights(data);
  std::vector<PosteriorDraws> out(data.n_weeks);
  parallel_for(data.n_weeks, threads, [&](int t) {
    PanelDataset sub = week_subset(scaled, t, true);
    if (sub.records.empty()) {
      out[t].mode = data.mode;
      out[t].n_areas = data.n_areas;
      out[t].n_weeks = 1;
      out[t].first_week = t;
      out[t].covariate_names = sub.covariate_names;
      return;
    }
    RngStream local = rng;
    out[t] = fit(sub, config, local);
    out[t].first_week = t;
  });
  return out;
}

}  // namespace

std::vector<PosteriorDraws> run_gbulm_per_week(const PanelDataset& data,
                                               const SamplerConfig& config, const RngStream& rng,
                                               int threads) {
  if (data.mode != ResponseMode::kGaussian) throw DataError("G-BULM requires gaussian mode data");
  return per_week(data, config, rng, threads,
                  [](const PanelDataset& d, const SamplerConfig& c, RngStream& r) {
                    return run_gtulm(d, c, r);
                  });
}

std::vector<PosteriorDraws> run_bbulm_per_week(const PanelDataset& data,
                                               const SamplerConfig& config, const RngStream& rng,
                                               int threads) {
  if (data.mode != ResponseMode::kBinary) throw DataError("B-BULM requires binary mode data");
  return per_week(data, config, rng, threads,
                  [](const PanelDataset& d, const SamplerConfig& c, RngStream& r) {
                    return run_btulm(d, c, r);
                  });
}

void write_direct_estimates(const std::vector<DirectEstimate>& est, std::ostream& out,
                            double alpha, char delimiter) {
  const double z = normal_critical_value(alpha);
  write_row(out, {"area", "week", "point", "se", "ci_lower", "ci_upper", "n_responses", "defined",
                  "variant"},
            delimiter);
  for (const auto& d : est) {
    write_row(out,
              {std::to_string(d.area + 1), std::to_string(d.week + 1), format_double(d.point),
               format_double(d.se), format_double(d.point - z * d.se),
               format_double(d.point + z * d.se), std::to_string(d.n_responses),
               d.defined ? "1" : "0", to_string(d.variant)},
              delimiter);
  }
}

}  // namespace tulm
