#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tulm/survey_data.hpp"

namespace tulm::testing {

struct SampleMoments {
  double mean = 0.0;
  double var = 0.0;
  double se_mean = 0.0;
  double se_var = 0.0;
};

inline SampleMoments moments(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  SampleMoments m;
  for (double v : x) m.mean += v;
  m.mean /= n;
  double m4 = 0.0;
  for (double v : x) {
    const double d = (v - m.mean) * (v - m.mean);
    m.var += d;
    m4 += d * d;
  }
  m.var /= n - 1.0;
  m4 /= n;
  m.se_mean = std::sqrt(m.var / n);
  m.se_var = std::sqrt(std::max(0.0, m4 - m.var * m.var) / n);
  return m;
}

// One-sample Kolmogorov-Smirnov distance against a continuous CDF.
inline double ks_distance(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, f - i / n, (i + 1) / n - f});
  }
  return d;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::fabs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

// Microdata schema with two numeric covariates x1, x2 and an intercept.
inline MicrodataSchema xy_schema() {
  MicrodataSchema s;
  CovariateSpec x1;
  x1.name = x1.column = "x1";
  CovariateSpec x2;
  x2.name = x2.column = "x2";
  s.covariates = {x1, x2};
  return s;
}

inline PanelDataset parse_panel(const std::string& csv, const MicrodataSchema& schema,
                                ResponseMode mode = ResponseMode::kGaussian) {
  std::istringstream in(csv);
  return ingest_microdata(in, schema, mode);
}

}  // namespace tulm::testing
