#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tulm/evaluation.hpp"
#include "tulm/model.hpp"
#include "tulm/survey_data.hpp"

namespace tulm::cli {

enum class Command { kFit, kPredict, kDirect, kStudy, kValidateKernels };

const char* to_string(Command c);
Command parse_command(const std::string& s);

enum class ModelKind { kTulm, kBulm };

struct Paths {
  std::string data;
  std::string cells;
  std::string output;
  std::vector<std::string> draws;  // predict: one file (tulm) or one per week (bulm)
};

struct PopulationSource {
  std::optional<GeneratorConfig> generator;
  std::string microdata;  // respondent file used as the finite population
};

struct RunConfig {
  Command command = Command::kFit;
  ResponseMode mode = ResponseMode::kGaussian;
  ModelKind model = ModelKind::kTulm;
  Paths paths;
  MicrodataSchema schema;
  SamplerConfig sampler;
  double alpha = 0.05;
  DomainFilter filter;
  bool write_domain_draws = false;
  bool record_timing = false;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  // study
  PopulationSource population;
  std::uint64_t population_seed = 0;  // generator stream; defaults to the run seed
  bool population_seed_set = false;
  StudyConfig study;
  // validate-kernels
  int kernel_draws = 1000000;

  nlohmann::json document;  // the parsed document after flag overrides
};

// Parses a configuration document; unknown keys are rejected with ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

// Deterministic 64-bit FNV-1a hash of a canonical serialization.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace tulm::cli
