#include "cli_app.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>

#include "tulm/baseline.hpp"
#include "tulm/btulm.hpp"
#include "tulm/error.hpp"
#include "tulm/evaluation.hpp"
#include "tulm/gtulm.hpp"
#include "tulm/prediction.hpp"
#include "tulm/table.hpp"

namespace tulm::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";
constexpr int kFormatVersion = 1;

struct Output {
  std::string file;
  std::string format;
};

class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
  }

  template <typename Fn>
  void write(const std::string& name, const std::string& format, Fn fn) {
    const fs::path path = dir_ / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    fn(out);
    out.close();
    if (!out) throw ConfigError("failed writing '" + path.string() + "'");
    outputs_.push_back({name, format});
  }

  void write_json(const std::string& name, const std::string& format, const json& doc) {
    write(name, format, [&](std::ostream& o) { o << doc.dump(2) << "\n"; });
  }

  const std::vector<Output>& outputs() const { return outputs_; }
  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<Output> outputs_;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("paths.") + what + " is required for this command");
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) {
    throw ConfigError(std::string(what) + " path '" + path + "' does not exist");
  }
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json summarize_vector(const Eigen::VectorXd& v) {
  if (v.size() == 0) return json(nullptr);
  const double mean = v.mean();
  const double sd = v.size() > 1 ? std::sqrt((v.array() - mean).square().sum() / (v.size() - 1.0)) : 0.0;
  return json{{"mean", number(mean)}, {"sd", number(sd)}};
}

json posterior_summary(const PosteriorDraws& d) {
  json j;
  j["retained_draws"] = d.size();
  json beta = json::object();
  for (int k = 0; k < d.p(); ++k) beta[d.covariate_names[k]] = summarize_vector(d.beta.col(k));
  j["beta"] = beta;
  if (d.mode == ResponseMode::kGaussian) {
    j["rho"] = summarize_vector(d.rho);
    j["sigma2"] = summarize_vector(d.sigma2);
    j["rho_acceptance"] = number(d.rho_acceptance);
  }
  j["phi"] = summarize_vector(d.phi);
  j["sigma2_eta1"] = summarize_vector(d.sigma2_eta1);
  j["sigma2_eta"] = summarize_vector(d.sigma2_eta);
  return j;
}

json sampler_json(const SamplerConfig& c) {
  return json{{"n_iter", c.n_iter},
              {"n_burn", c.n_burn},
              {"thin", c.thin},
              {"sigma2_beta", c.sigma2_beta},
              {"a", c.a},
              {"b", c.b},
              {"rho_proposal_halfwidth", c.rho_proposal_halfwidth},
              {"pg_truncation", c.pg_truncation}};
}

void write_manifest(OutputDir& dir, const RunConfig& rc, const std::string& status) {
  json m;
  m["format_version"] = kFormatVersion;
  m["tool"] = "tulm_cli";
  m["version"] = kVersion;
  m["command"] = to_string(rc.command);
  m["mode"] = to_string(rc.mode);
  m["model"] = rc.model == ModelKind::kTulm ? "tulm" : "bulm";
  m["seed"] = *rc.seed;
  m["threads"] = rc.threads;
  m["config_hash"] = hex64(fnv1a64(rc.document.dump()));
  m["config"] = rc.document;
  m["status"] = status;
  json outs = json::array();
  for (const auto& o : dir.outputs()) outs.push_back(json{{"file", o.file}, {"format", o.format}});
  m["outputs"] = outs;
  m["libraries"] = json{
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                    "." + std::to_string(EIGEN_MINOR_VERSION)},
      {"boost", std::to_string(BOOST_VERSION / 100000) + "." +
                    std::to_string(BOOST_VERSION / 100 % 1000)}};
  const fs::path path = dir.path() / "manifest.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << m.dump(2) << "\n";
}

PanelDataset load_panel(const RunConfig& rc) {
  PanelDataset data = ingest_microdata(rc.paths.data, rc.schema, rc.mode);
  data = scale_weights(data);
  if (rc.mode == ResponseMode::kBinary && rc.model == ModelKind::kTulm) data = build_prev_covariate(data);
  return data;
}

json data_report(const PanelDataset& data) {
  json weeks = json::array();
  for (int t = 0; t < data.n_weeks; ++t) {
    weeks.push_back(json{{"week", t + 1},
                         {"first_time", data.first_time[t].size()},
                         {"followup", data.followup[t].size()}});
  }
  return json{{"records", data.size()},
              {"n_areas", data.n_areas},
              {"n_weeks", data.n_weeks},
              {"covariates", data.covariate_names},
              {"dropped_nonresponse", data.dropped_nonresponse()},
              {"weeks", weeks}};
}

std::string week_draw_name(int week) { return "draws_week_" + std::to_string(week + 1) + ".csv"; }

std::vector<PosteriorDraws> fit(const RunConfig& rc, const PanelDataset& data, OutputDir& dir,
                                json& report) {
  const RngStream rng(*rc.seed, 0);
  std::vector<PosteriorDraws> draws;
  if (rc.model == ModelKind::kTulm) {
    RngStream chain = rng.split(0);
    draws.push_back(rc.mode == ResponseMode::kGaussian ? run_gtulm(data, rc.sampler, chain)
                                                       : run_btulm(data, rc.sampler, chain));
    dir.write("draws.csv", "tulm-draws-v1", [&](std::ostream& o) { write_draws(draws[0], o); });
    report["posterior"] = posterior_summary(draws[0]);
  } else {
    draws = rc.mode == ResponseMode::kGaussian
                ? run_gbulm_per_week(data, rc.sampler, rng.split(0), rc.threads)
                : run_bbulm_per_week(data, rc.sampler, rng.split(0), rc.threads);
    json per_week = json::array();
    for (const auto& d : draws) {
      if (d.size() == 0) continue;
      dir.write(week_draw_name(d.first_week), "tulm-draws-v1", [&](std::ostream& o) { write_draws(d, o); });
      json s = posterior_summary(d);
      s["week"] = d.first_week + 1;
      per_week.push_back(s);
    }
    report["posterior"] = per_week;
  }
  report["sampler"] = sampler_json(rc.sampler);
  return draws;
}

void predict(const RunConfig& rc, const std::vector<PosteriorDraws>& draws,
             const PopulationCells& cells, OutputDir& dir, json& report) {
  const RngStream rng(*rc.seed, 0);
  PredictionOptions opt;
  opt.alpha = rc.alpha;
  opt.filter = rc.filter;
  opt.threads = rc.threads;
  const DomainPrediction pred = rc.mode == ResponseMode::kGaussian
                                    ? predict_gaussian_domains(draws, cells, rng.split(1), opt)
                                    : predict_binary_domains(draws, cells, rng.split(1), opt);
  dir.write("domain_estimates.csv", "tulm-domain-estimates-v1",
            [&](std::ostream& o) { write_domain_estimates(pred, o); });
  if (rc.write_domain_draws) {
    dir.write("domain_draws.csv", "tulm-domain-draws-v1",
              [&](std::ostream& o) { write_domain_draws(pred, o); });
  }
  int defined = 0;
  for (const auto& e : pred.estimates) defined += e.n_draws > 0 ? 1 : 0;
  report["prediction"] = json{{"alpha", rc.alpha}, {"domains", pred.estimates.size()}, {"estimated", defined}};
}

int cmd_fit(const RunConfig& rc, OutputDir& dir) {
  const PanelDataset data = load_panel(rc);
  json report;
  report["data"] = data_report(data);
  fit(rc, data, dir, report);
  dir.write_json("fit_report.json", "tulm-fit-report-v1", report);
  return 0;
}

int cmd_predict(const RunConfig& rc, OutputDir& dir) {
  const PopulationCells cells = ingest_cells(rc.paths.cells, rc.schema);
  json report;
  std::vector<PosteriorDraws> draws;
  if (!rc.paths.draws.empty()) {
    const int m = rc.schema.n_areas > 0 ? rc.schema.n_areas : cells.n_areas;
    for (const auto& path : rc.paths.draws) {
      std::ifstream in(path);
      if (!in) throw DataError("cannot open draws file '" + path + "'");
      draws.push_back(read_draws(in, rc.mode, m, path));
    }
  } else {
    const PanelDataset data = load_panel(rc);
    report["data"] = data_report(data);
    draws = fit(rc, data, dir, report);
  }
  predict(rc, draws, cells, dir, report);
  dir.write_json("predict_report.json", "tulm-predict-report-v1", report);
  return 0;
}

int cmd_direct(const RunConfig& rc, OutputDir& dir) {
  PanelDataset data = ingest_microdata(rc.paths.data, rc.schema, rc.mode);
  std::vector<DirectEstimate> est;
  if (!rc.paths.cells.empty()) {
    const PopulationCells cells = ingest_cells(rc.paths.cells, rc.schema);
    est = direct_estimate(data, cells, rc.filter);
  } else {
    est = direct_estimate(data, std::vector<double>{}, rc.filter);
  }
  dir.write("direct_estimates.csv", "tulm-direct-estimates-v1",
            [&](std::ostream& o) { write_direct_estimates(est, o, rc.alpha); });
  int defined = 0;
  for (const auto& d : est) defined += d.defined ? 1 : 0;
  json report{{"data", data_report(data)},
              {"alpha", rc.alpha},
              {"interval", "wald"},
              {"variant", rc.paths.cells.empty() ? "hajek" : "horvitz_thompson"},
              {"domains", est.size()},
              {"defined", defined}};
  dir.write_json("direct_report.json", "tulm-direct-report-v1", report);
  return 0;
}

void write_truth(const SyntheticPopulation& pop, std::ostream& o) {
  write_row(o, {"area", "week", "truth", "population_size"});
  for (int t = 0; t < pop.n_weeks; ++t) {
    for (int j = 0; j < pop.n_areas; ++j) {
      const std::size_t k = static_cast<std::size_t>(t) * pop.n_areas + j;
      write_row(o, {std::to_string(j + 1), std::to_string(t + 1), format_double(pop.truth[k]),
                    format_double(pop.domain_size[k])});
    }
  }
}

int cmd_study(const RunConfig& rc, OutputDir& dir, std::ostream& err, InterruptState* interrupt) {
  SyntheticPopulation pop;
  if (rc.population.generator) {
    RngStream prng(rc.population_seed_set ? rc.population_seed : *rc.seed, 1);
    pop = generate_population(*rc.population.generator, prng);
  } else {
    const PanelDataset data = ingest_microdata(rc.population.microdata, rc.schema, rc.mode);
    pop = population_from_microdata(data);
  }
  StudyConfig sc = rc.study;
  sc.threads = rc.threads;
  const RngStream rng(*rc.seed, 2);
  if (interrupt) interrupt->deferred = true;
  const StudyResult res = run_study(pop, sc, rng, interrupt ? &interrupt->requested : nullptr,
                                    [&](int rep, const std::string& est) {
                                      err << "replicate " << rep + 1 << " " << est << " done\n";
                                    });
  if (interrupt) interrupt->deferred = false;
  const bool interrupted = res.completed_replicates < sc.n_replicates;

  dir.write("population_truth.csv", "tulm-truth-v1", [&](std::ostream& o) { write_truth(pop, o); });
  dir.write("study_records.csv", "tulm-study-records-v1",
            [&](std::ostream& o) { write_study_records(res.records, o); });
  dir.write("study_runs.csv", "tulm-study-runs-v1",
            [&](std::ostream& o) { write_study_runs(res.runs, o, rc.record_timing); });
  dir.write("replicate_metrics.csv", "tulm-replicate-metrics-v1",
            [&](std::ostream& o) { write_replicate_metrics(res.per_replicate, o); });
  dir.write("study_summary.csv", "tulm-study-summary-v1",
            [&](std::ostream& o) { write_study_summary(res.summary, o); });
  json report{{"n_replicates", sc.n_replicates},
              {"completed_replicates", res.completed_replicates},
              {"population_units", pop.units.size()},
              {"mse_order_fraction", number(res.summary.mse_order_fraction)},
              {"interval_score_order_fraction", number(res.summary.score_order_fraction)},
              {"median_se_ratio", number(res.summary.median_se_ratio)},
              {"direct_variant", res.summary.direct_variant},
              {"direct_interval", "wald"},
              {"undefined_direct_domains", "excluded from direct averages"},
              {"sampler", sampler_json(*sc.sampler)}};
  dir.write_json("study_report.json", "tulm-study-report-v1", report);
  return interrupted ? kInterruptedExit : 0;
}

// Oracle moments for the kernel self-check.
struct Moments {
  double mean;
  double var;
};

Moments polya_gamma_moments(double b, double c) {
  if (std::fabs(c) < 1e-6) return {b / 4.0, b / 24.0};
  const double mean = b * std::tanh(c / 2.0) / (2.0 * c);
  const double ch = std::cosh(c / 2.0);
  const double var = b * (std::sinh(c) - c) / (4.0 * c * c * c * ch * ch);
  return {mean, var};
}

Moments truncated_normal_moments(double mu, double var, double lo, double hi) {
  const double s = std::sqrt(var);
  double a = (lo - mu) / s;
  double b = (hi - mu) / s;
  double sign = 1.0;
  if (b < 0.0) {  // reflect onto the upper tail for accuracy
    const double t = a;
    a = -b;
    b = -t;
    sign = -1.0;
  }
  auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  auto sf = [](double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); };
  const double Z = sf(a) - sf(b);
  const double d = (pdf(a) - pdf(b)) / Z;
  const double m = d;
  const double v = 1.0 + (a * pdf(a) - b * pdf(b)) / Z - d * d;
  return {mu + sign * s * m, var * v};
}

int cmd_validate_kernels(const RunConfig& rc, OutputDir& dir) {
  struct Check {
    std::string name;
    std::function<double(RngStream&)> draw;
    Moments expected;
  };
  std::vector<Check> checks = {
      {"PG(1,0)", [](RngStream& r) { return draw_polya_gamma(1.0, 0.0, r); }, polya_gamma_moments(1, 0)},
      {"PG(1,2)", [](RngStream& r) { return draw_polya_gamma(1.0, 2.0, r); }, polya_gamma_moments(1, 2)},
      {"PG(2.5,1)", [](RngStream& r) { return draw_polya_gamma(2.5, 1.0, r); }, polya_gamma_moments(2.5, 1)},
      {"TN(0,1;-1,1)", [](RngStream& r) { return draw_truncated_normal(0, 1, -1, 1, r); },
       truncated_normal_moments(0, 1, -1, 1)},
      {"TN(0.5,0.01;-1,1)", [](RngStream& r) { return draw_truncated_normal(0.5, 0.01, -1, 1, r); },
       truncated_normal_moments(0.5, 0.01, -1, 1)},
      {"TN(10,1;-1,1)", [](RngStream& r) { return draw_truncated_normal(10, 1, -1, 1, r); },
       truncated_normal_moments(10, 1, -1, 1)},
      {"IG(3,2)", [](RngStream& r) { return draw_inverse_gamma(3, 2, r); }, Moments{1.0, 1.0}},
      {"IG(5,2)", [](RngStream& r) { return draw_inverse_gamma(5, 2, r); }, Moments{0.5, 0.25 / 3.0}},
  };
  const RngStream root(*rc.seed, 3);
  const int n = rc.kernel_draws;
  bool all_pass = true;
  dir.write("kernel_checks.csv", "tulm-kernel-checks-v1", [&](std::ostream& o) {
    write_row(o, {"kernel", "statistic", "empirical", "expected", "se", "z", "pass"});
    for (std::size_t k = 0; k < checks.size(); ++k) {
      RngStream r = root.split(k);
      std::vector<double> x(n);
      for (int i = 0; i < n; ++i) x[i] = checks[k].draw(r);
      double mean = 0.0;
      for (double v : x) mean += v;
      mean /= n;
      double m2 = 0.0, m4 = 0.0;
      for (double v : x) {
        const double d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
      }
      const double var = m2 / (n - 1);
      m4 /= n;
      const double se_mean = std::sqrt(var / n);
      const double se_var = std::sqrt(std::max(0.0, m4 - var * var) / n);
      const double z_mean = (mean - checks[k].expected.mean) / se_mean;
      const double z_var = (var - checks[k].expected.var) / se_var;
      const bool pm = std::fabs(z_mean) < 4.0;
      const bool pv = std::fabs(z_var) < 4.0;
      all_pass = all_pass && pm && pv;
      write_row(o, {checks[k].name, "mean", format_double(mean), format_double(checks[k].expected.mean),
                    format_double(se_mean), format_double(z_mean), pm ? "1" : "0"});
      write_row(o, {checks[k].name, "variance", format_double(var), format_double(checks[k].expected.var),
                    format_double(se_var), format_double(z_var), pv ? "1" : "0"});
    }
  });
  dir.write_json("kernel_report.json", "tulm-kernel-report-v1",
                 json{{"draws", n}, {"all_pass", all_pass}, {"threshold_z", 4.0}});
  return all_pass ? 0 : static_cast<int>(ExitCode::kNumericError);
}

void check_inputs(const RunConfig& rc) {
  if (!rc.seed) throw ConfigError("a seed is required (config 'seed' or --seed)");
  if (rc.paths.output.empty()) throw ConfigError("an output directory is required (paths.output or --output)");
  switch (rc.command) {
    case Command::kFit:
      require_file(rc.paths.data, "data");
      break;
    case Command::kPredict:
      require_file(rc.paths.cells, "cells");
      if (rc.paths.draws.empty()) {
        require_file(rc.paths.data, "data");
      } else {
        for (const auto& d : rc.paths.draws) require_file(d, "draws");
      }
      break;
    case Command::kDirect:
      require_file(rc.paths.data, "data");
      if (!rc.paths.cells.empty()) require_file(rc.paths.cells, "cells");
      break;
    case Command::kStudy:
      rc.study.validate(rc.mode);
      if (!rc.population.generator) require_file(rc.population.microdata, "population microdata");
      break;
    case Command::kValidateKernels:
      break;
  }
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  json doc{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  err << doc.dump() << "\n";
}

}  // namespace

int run_command(const RunConfig& rc, std::ostream& out, std::ostream& err,
                InterruptState* interrupt) {
  try {
    check_inputs(rc);
    OutputDir dir(rc.paths.output);
    int code = 0;
    switch (rc.command) {
      case Command::kFit: code = cmd_fit(rc, dir); break;
      case Command::kPredict: code = cmd_predict(rc, dir); break;
      case Command::kDirect: code = cmd_direct(rc, dir); break;
      case Command::kStudy: code = cmd_study(rc, dir, err, interrupt); break;
      case Command::kValidateKernels: code = cmd_validate_kernels(rc, dir); break;
    }
    write_manifest(dir, rc, code == kInterruptedExit ? "interrupted" : code == 0 ? "complete" : "failed");
    out << dir.path().string() << "\n";
    return code;
  } catch (const Error& e) {
    const int code = static_cast<int>(e.exit_code());
    report_error(err, e.kind(), e.what(), code);
    return code;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            InterruptState* interrupt) {
  CLI::App app{"Bayesian unit-level longitudinal small area estimation", "tulm_cli"};
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string output;
  app.add_option("command", command, "fit | predict | direct | study | validate-kernels (overrides config)");
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--seed", seed, "Random seed (overrides config)");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--output", output, "Output directory (overrides config)");
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "config_error", e.what(), static_cast<int>(ExitCode::kConfigError));
    return static_cast<int>(ExitCode::kConfigError);
  }
  try {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file '" + config_path + "'");
    json doc;
    try {
      doc = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + config_path + "' is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config document must be an object");
    if (!command.empty()) doc["command"] = command;
    if (seed) doc["seed"] = *seed;
    if (threads) doc["threads"] = *threads;
    if (!output.empty()) {
      if (!doc.contains("paths")) doc["paths"] = json::object();
      doc["paths"]["output"] = output;
    }
    const RunConfig rc = parse_run_config(doc);
    return run_command(rc, out, err, interrupt);
  } catch (const Error& e) {
    const int code = static_cast<int>(e.exit_code());
    report_error(err, e.kind(), e.what(), code);
    return code;
  }
}

}  // namespace tulm::cli
