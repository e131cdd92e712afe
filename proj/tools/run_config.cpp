#include "run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "tulm/error.hpp"

namespace tulm::cli {
namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
T get(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

char parse_delimiter(const std::string& s) {
  if (s == "\\t" || s == "tab") return '\t';
  if (s.size() != 1) throw ConfigError("delimiter must be a single character");
  return s[0];
}

CovariateSpec parse_covariate(const json& c, const std::string& where) {
  check_keys(c, where, {"name", "column", "type", "center", "scale", "power", "levels", "reference"});
  CovariateSpec s;
  s.column = get<std::string>(c, "column", where, "");
  if (s.column.empty()) throw ConfigError(where + ".column is required");
  s.name = get<std::string>(c, "name", where, s.column);
  const std::string type = get<std::string>(c, "type", where, "numeric");
  if (type == "numeric") {
    s.kind = CovariateSpec::Kind::kNumeric;
    s.center = get<double>(c, "center", where, 0.0);
    s.scale = get<double>(c, "scale", where, 1.0);
    s.power = get<int>(c, "power", where, 1);
    if (!(s.scale != 0.0) || s.power < 1) throw ConfigError(where + ": scale must be nonzero and power >= 1");
  } else if (type == "categorical") {
    s.kind = CovariateSpec::Kind::kCategorical;
    s.levels = get<std::vector<std::string>>(c, "levels", where, {});
    s.reference = get<std::string>(c, "reference", where, "");
    if (s.levels.empty() || s.reference.empty()) {
      throw ConfigError(where + ": categorical covariates need 'levels' and 'reference'");
    }
  } else {
    throw ConfigError(where + ".type must be 'numeric' or 'categorical'");
  }
  return s;
}

MicrodataSchema parse_schema(const json& s) {
  const std::string w = "schema";
  check_keys(s, w, {"delimiter", "unit_id", "area", "week", "weight", "response", "trials",
                    "intercept", "covariates", "box_cox_lambda", "max_consecutive_weeks",
                    "n_areas", "n_weeks", "count", "prev_status"});
  MicrodataSchema m;
  m.delimiter = parse_delimiter(get<std::string>(s, "delimiter", w, ","));
  m.unit_id = get<std::string>(s, "unit_id", w, m.unit_id);
  m.area = get<std::string>(s, "area", w, m.area);
  m.week = get<std::string>(s, "week", w, m.week);
  m.weight = get<std::string>(s, "weight", w, m.weight);
  m.response = get<std::string>(s, "response", w, m.response);
  m.trials = get<std::string>(s, "trials", w, "");
  m.intercept = get<bool>(s, "intercept", w, true);
  if (s.contains("covariates")) {
    const json& cs = s.at("covariates");
    if (!cs.is_array()) throw ConfigError("schema.covariates must be an array");
    for (std::size_t i = 0; i < cs.size(); ++i) {
      m.covariates.push_back(parse_covariate(cs[i], "schema.covariates[" + std::to_string(i) + "]"));
    }
  }
  if (s.contains("box_cox_lambda") && !s.at("box_cox_lambda").is_null()) {
    m.box_cox_lambda = get<double>(s, "box_cox_lambda", w, 0.0);
  }
  m.max_consecutive_weeks = get<int>(s, "max_consecutive_weeks", w, 3);
  m.n_areas = get<int>(s, "n_areas", w, 0);
  m.n_weeks = get<int>(s, "n_weeks", w, 0);
  m.count = get<std::string>(s, "count", w, m.count);
  m.prev_status = get<std::string>(s, "prev_status", w, "");
  return m;
}

SamplerConfig parse_sampler(const json& s, SamplerConfig c) {
  const std::string w = "sampler";
  check_keys(s, w, {"n_iter", "n_burn", "thin", "sigma2_beta", "a", "b",
                    "rho_proposal_halfwidth", "pg_truncation"});
  c.n_iter = get<int>(s, "n_iter", w, c.n_iter);
  c.n_burn = get<int>(s, "n_burn", w, c.n_burn);
  c.thin = get<int>(s, "thin", w, c.thin);
  c.sigma2_beta = get<double>(s, "sigma2_beta", w, c.sigma2_beta);
  c.a = get<double>(s, "a", w, c.a);
  c.b = get<double>(s, "b", w, c.b);
  c.rho_proposal_halfwidth = get<double>(s, "rho_proposal_halfwidth", w, c.rho_proposal_halfwidth);
  c.pg_truncation = get<int>(s, "pg_truncation", w, c.pg_truncation);
  c.validate();
  return c;
}

GeneratorConfig parse_generator(const json& g, ResponseMode mode) {
  const std::string w = "study.population.generator";
  check_keys(g, w, {"n_units", "n_areas", "n_weeks", "pattern_fractions", "area_size_sd", "beta",
                    "rho", "phi", "sigma2", "sigma2_eta1", "sigma2_eta", "prev_no_effect",
                    "prev_yes_effect", "box_cox_lambda", "weight_scale", "weight_sd",
                    "weight_corr"});
  GeneratorConfig c = mode == ResponseMode::kGaussian ? GeneratorConfig::gaussian_defaults()
                                                      : GeneratorConfig::binary_defaults();
  c.n_units = get<int>(g, "n_units", w, c.n_units);
  c.n_areas = get<int>(g, "n_areas", w, c.n_areas);
  c.n_weeks = get<int>(g, "n_weeks", w, c.n_weeks);
  if (g.contains("pattern_fractions")) {
    const auto f = get<std::vector<double>>(g, "pattern_fractions", w, {});
    if (f.size() != 3) throw ConfigError("invalid panel pattern fractions (need 3 entries)");
    c.pattern_fractions = {f[0], f[1], f[2]};
  }
  c.area_size_sd = get<double>(g, "area_size_sd", w, c.area_size_sd);
  c.beta = get<std::vector<double>>(g, "beta", w, c.beta);
  c.rho = get<double>(g, "rho", w, c.rho);
  c.phi = get<double>(g, "phi", w, c.phi);
  c.sigma2 = get<double>(g, "sigma2", w, c.sigma2);
  c.sigma2_eta1 = get<double>(g, "sigma2_eta1", w, c.sigma2_eta1);
  c.sigma2_eta = get<double>(g, "sigma2_eta", w, c.sigma2_eta);
  c.prev_no_effect = get<double>(g, "prev_no_effect", w, c.prev_no_effect);
  c.prev_yes_effect = get<double>(g, "prev_yes_effect", w, c.prev_yes_effect);
  if (g.contains("box_cox_lambda")) {
    if (g.at("box_cox_lambda").is_null()) {
      c.box_cox_lambda.reset();
    } else {
      c.box_cox_lambda = get<double>(g, "box_cox_lambda", w, 0.0);
    }
  }
  c.weight_scale = get<double>(g, "weight_scale", w, c.weight_scale);
  c.weight_sd = get<double>(g, "weight_sd", w, c.weight_sd);
  c.weight_corr = get<double>(g, "weight_corr", w, c.weight_corr);
  c.mode = mode;
  c.validate();
  return c;
}

}  // namespace

const char* to_string(Command c) {
  switch (c) {
    case Command::kFit: return "fit";
    case Command::kPredict: return "predict";
    case Command::kDirect: return "direct";
    case Command::kStudy: return "study";
    case Command::kValidateKernels: return "validate-kernels";
  }
  return "?";
}

Command parse_command(const std::string& s) {
  if (s == "fit") return Command::kFit;
  if (s == "predict") return Command::kPredict;
  if (s == "direct") return Command::kDirect;
  if (s == "study") return Command::kStudy;
  if (s == "validate-kernels") return Command::kValidateKernels;
  throw ConfigError("unknown command '" + s + "' (expected fit, predict, direct, study or validate-kernels)");
}

RunConfig parse_run_config(const json& doc) {
  check_keys(doc, "config", {"command", "mode", "model", "seed", "threads", "paths", "schema",
                             "sampler", "prediction", "study", "validate", "record_timing"});
  RunConfig rc;
  rc.document = doc;
  rc.command = parse_command(get<std::string>(doc, "command", "config", "fit"));
  try {
    rc.mode = parse_response_mode(get<std::string>(doc, "mode", "config", "gaussian"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const std::string model = get<std::string>(doc, "model", "config", "tulm");
  if (model == "tulm") {
    rc.model = ModelKind::kTulm;
  } else if (model == "bulm") {
    rc.model = ModelKind::kBulm;
  } else {
    throw ConfigError("model must be 'tulm' or 'bulm'");
  }
  if (doc.contains("seed") && !doc.at("seed").is_null()) {
    if (!doc.at("seed").is_number_integer()) throw ConfigError("seed must be an integer");
    rc.seed = doc.at("seed").get<std::uint64_t>();
  }
  rc.threads = get<int>(doc, "threads", "config", 1);
  if (rc.threads <= 0) throw ConfigError("threads must be positive");
  rc.record_timing = get<bool>(doc, "record_timing", "config", false);

  if (doc.contains("paths")) {
    const json& p = doc.at("paths");
    check_keys(p, "paths", {"data", "cells", "output", "draws"});
    rc.paths.data = get<std::string>(p, "data", "paths", "");
    rc.paths.cells = get<std::string>(p, "cells", "paths", "");
    rc.paths.output = get<std::string>(p, "output", "paths", "");
    if (p.contains("draws")) {
      if (p.at("draws").is_string()) {
        rc.paths.draws = {p.at("draws").get<std::string>()};
      } else {
        rc.paths.draws = get<std::vector<std::string>>(p, "draws", "paths", {});
      }
    }
  }
  if (doc.contains("schema")) rc.schema = parse_schema(doc.at("schema"));

  const SamplerConfig base = rc.mode == ResponseMode::kGaussian ? SamplerConfig::gaussian_defaults()
                                                                : SamplerConfig::binary_defaults();
  rc.sampler = doc.contains("sampler") ? parse_sampler(doc.at("sampler"), base) : base;

  if (doc.contains("prediction")) {
    const json& p = doc.at("prediction");
    check_keys(p, "prediction", {"alpha", "write_domain_draws", "filter"});
    rc.alpha = get<double>(p, "alpha", "prediction", 0.05);
    if (!(rc.alpha > 0.0 && rc.alpha < 1.0)) throw ConfigError("prediction.alpha must lie in (0, 1)");
    rc.write_domain_draws = get<bool>(p, "write_domain_draws", "prediction", false);
    if (p.contains("filter")) {
      const json& f = p.at("filter");
      if (!f.is_object()) throw ConfigError("prediction.filter must be an object");
      for (auto it = f.begin(); it != f.end(); ++it) {
        if (!it.value().is_number()) throw ConfigError("prediction.filter values must be numbers");
        rc.filter.equals.emplace_back(it.key(), it.value().get<double>());
      }
    }
  }

  if (doc.contains("study")) {
    const json& s = doc.at("study");
    const std::string w = "study";
    check_keys(s, w, {"population", "population_seed", "n_replicates", "expected_frac", "alpha",
                      "estimators", "size_model"});
    rc.study.n_replicates = get<int>(s, "n_replicates", w, rc.study.n_replicates);
    rc.study.expected_frac = get<double>(s, "expected_frac", w, rc.study.expected_frac);
    rc.study.alpha = get<double>(s, "alpha", w, rc.study.alpha);
    rc.study.estimators = get<std::vector<std::string>>(s, "estimators", w, rc.study.estimators);
    if (s.contains("size_model")) {
      const json& z = s.at("size_model");
      check_keys(z, "study.size_model", {"coef_mean", "coef_weight"});
      rc.study.size.coef_mean = get<double>(z, "coef_mean", "study.size_model", 0.1);
      rc.study.size.coef_weight = get<double>(z, "coef_weight", "study.size_model", 0.2);
    }
    if (s.contains("population_seed")) {
      rc.population_seed = get<std::uint64_t>(s, "population_seed", w, 0);
      rc.population_seed_set = true;
    }
    if (s.contains("population")) {
      const json& p = s.at("population");
      check_keys(p, "study.population", {"generator", "microdata"});
      if (p.contains("generator") == p.contains("microdata")) {
        throw ConfigError("study.population needs exactly one of 'generator' or 'microdata'");
      }
      if (p.contains("generator")) {
        rc.population.generator = parse_generator(p.at("generator"), rc.mode);
      } else {
        rc.population.microdata = get<std::string>(p, "microdata", "study.population", "");
      }
    } else {
      rc.population.generator = parse_generator(json::object(), rc.mode);
    }
  }
  rc.study.sampler = rc.sampler;

  if (doc.contains("validate")) {
    const json& v = doc.at("validate");
    check_keys(v, "validate", {"draws"});
    rc.kernel_draws = get<int>(v, "draws", "validate", rc.kernel_draws);
    if (rc.kernel_draws < 1000) throw ConfigError("validate.draws must be at least 1000");
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace tulm::cli
