#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "cli_app.hpp"
#include "run_config.hpp"
#include "tulm/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using tulm::cli::run_cli;

namespace {

const fs::path kSource = TULM_SOURCE_DIR;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("tulm_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TempDir& tmp() {
  static TempDir d;
  return d;
}

json load_example(const std::string& name) {
  std::ifstream in(kSource / "configs" / name);
  json doc = json::parse(in, nullptr, true, true);
  if (doc.contains("paths")) {
    for (const char* key : {"data", "cells"}) {
      if (doc["paths"].contains(key)) doc["paths"][key] = (kSource / doc["paths"][key].get<std::string>()).string();
    }
  }
  return doc;
}

std::string write_config(const json& doc, const std::string& name) {
  const fs::path p = tmp().path / (name + ".json");
  std::ofstream(p) << doc.dump(2);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

json small_sampler(json doc) {
  doc["sampler"]["n_iter"] = 150;
  doc["sampler"]["n_burn"] = 50;
  return doc;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("fit writes draws and a manifest") {
  const auto cfg = write_config(small_sampler(load_example("gaussian_predict.json")), "fit");
  const fs::path out = tmp().path / "fit";
  const auto r = cli({"fit", "--config", cfg, "--output", out.string(), "--seed", "5"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out / "draws.csv"));
  CHECK(fs::exists(out / "fit_report.json"));
  const json m = json::parse(slurp(out / "manifest.json"));
  CHECK(m["status"] == "complete");
  CHECK(m["seed"] == 5);
  CHECK(m["command"] == "fit");
  CHECK(m["config"]["paths"]["output"] == out.string());
  CHECK(m["config_hash"].get<std::string>().size() == 16);
  bool listed = false;
  for (const auto& o : m["outputs"]) listed = listed || o["file"] == "draws.csv";
  CHECK(listed);
}

TEST_CASE("identical runs give byte-identical outputs") {
  const auto cfg = write_config(small_sampler(load_example("gaussian_predict.json")), "predict");
  const fs::path a = tmp().path / "pa", b = tmp().path / "pb", c = tmp().path / "pc";
  REQUIRE(cli({"--config", cfg, "--output", a.string(), "--seed", "9"}).code == 0);
  REQUIRE(cli({"--config", cfg, "--output", b.string(), "--seed", "9"}).code == 0);
  REQUIRE(cli({"--config", cfg, "--output", c.string(), "--seed", "9", "--threads", "2"}).code == 0);
  for (const char* f : {"domain_estimates.csv", "predict_report.json"}) {
    CAPTURE(f);
    const auto x = slurp(a / f);
    CHECK_FALSE(x.empty());
    CHECK(x == slurp(b / f));
    CHECK(x == slurp(c / f));
  }
  const fs::path d = tmp().path / "pd";
  REQUIRE(cli({"--config", cfg, "--output", d.string(), "--seed", "10"}).code == 0);
  CHECK(slurp(a / "domain_estimates.csv") != slurp(d / "domain_estimates.csv"));
}

TEST_CASE("binary bulm predict writes per-week draws") {
  json doc = load_example("binary_predict.json");
  doc["model"] = "bulm";
  doc["sampler"]["n_iter"] = 100;
  doc["sampler"]["n_burn"] = 50;
  doc["sampler"]["pg_truncation"] = 10;
  const auto cfg = write_config(doc, "binary");
  const fs::path out = tmp().path / "binary";
  const auto r = cli({"--config", cfg, "--output", out.string(), "--seed", "3"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out / "draws_week_1.csv"));
  CHECK(fs::exists(out / "domain_estimates.csv"));
}

TEST_CASE("direct estimates") {
  const auto cfg = write_config(load_example("direct.json"), "direct");
  const fs::path out = tmp().path / "direct";
  const auto r = cli({"--config", cfg, "--output", out.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out / "direct_estimates.csv"));
}

TEST_CASE("validation failures exit 2 before any output is written") {
  json doc = small_sampler(load_example("gaussian_predict.json"));
  SUBCASE("missing data file") {
    doc["paths"]["data"] = (tmp().path / "no_such_file.csv").string();
  }
  SUBCASE("unknown key") { doc["sampler"]["n_iterations"] = 10; }
  SUBCASE("invalid sampler") { doc["sampler"]["n_burn"] = 500; }
  SUBCASE("missing seed") { doc.erase("seed"); }
  const auto cfg = write_config(doc, "bad");
  const fs::path out = tmp().path / "bad_out";
  const auto r = cli({"--config", cfg, "--output", out.string()});
  CHECK(r.code == 2);
  CHECK_FALSE(fs::exists(out));
  const json e = json::parse(r.err);
  CHECK(e["error"]["exit_code"] == 2);
}

TEST_CASE("argument errors") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"--config", (tmp().path / "missing.json").string()}).code == 2);
  const auto cfg = write_config(load_example("direct.json"), "args");
  CHECK(cli({"--config", cfg, "--threads", "0"}).code == 2);
  CHECK(cli({"--config", cfg, "--bogus"}).code == 2);
  CHECK(cli({"sample", "--config", cfg}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("data errors exit 3") {
  const fs::path data = tmp().path / "dup.csv";
  std::ofstream(data) << "unit_id,area,week,weight,hours,employed,female,age\n"
                         "a,1,1,2,30,1,0,40\n"
                         "a,1,1,2,31,1,0,40\n";
  json doc = small_sampler(load_example("gaussian_predict.json"));
  doc["paths"]["data"] = data.string();
  const auto cfg = write_config(doc, "dup");
  const auto r = cli({"fit", "--config", cfg, "--output", (tmp().path / "dup_out").string()});
  CHECK(r.code == 3);
  CHECK(json::parse(r.err)["error"]["kind"] == "data_error");
}

TEST_CASE("unknown estimator in a study exits 2") {
  json doc = load_example("study_gaussian.json");
  doc["study"]["estimators"] = {"direct", "lasso"};
  const auto cfg = write_config(doc, "study_bad");
  const fs::path out = tmp().path / "study_bad";
  CHECK(cli({"--config", cfg, "--output", out.string()}).code == 2);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("micro study") {
  json doc = load_example("study_gaussian.json");
  doc["study"]["population"]["generator"]["n_units"] = 3000;
  doc["study"]["population"]["generator"]["n_areas"] = 4;
  doc["study"]["population"]["generator"]["n_weeks"] = 3;
  doc["study"]["n_replicates"] = 2;
  doc["study"]["expected_frac"] = 0.05;
  doc["sampler"] = {{"n_iter", 120}, {"n_burn", 40}};
  const auto cfg = write_config(doc, "study");
  const fs::path out = tmp().path / "study";
  const auto r = cli({"--config", cfg, "--output", out.string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"population_truth.csv", "study_records.csv", "study_summary.csv", "study_report.json"})
    CHECK(fs::exists(out / f));
  const json rep = json::parse(slurp(out / "study_report.json"));
  CHECK(rep.dump().find("median_se_ratio") != std::string::npos);
}

TEST_CASE("validate-kernels") {
  json doc = load_example("validate_kernels.json");
  doc["validate"]["draws"] = 20000;
  const auto cfg = write_config(doc, "kernels");
  const fs::path out = tmp().path / "kernels";
  const auto r = cli({"--config", cfg, "--output", out.string()});
  INFO(r.err);
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "kernel_checks.csv"));
}

}
