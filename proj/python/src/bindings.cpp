#include <sstream>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "cli_app.hpp"
#include "run_config.hpp"
#include "tulm/baseline.hpp"
#include "tulm/btulm.hpp"
#include "tulm/error.hpp"
#include "tulm/evaluation.hpp"
#include "tulm/gtulm.hpp"
#include "tulm/rng.hpp"

namespace py = pybind11;
using namespace tulm;

namespace {

cli::RunConfig parse_config(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.contains("paths")) doc["paths"] = nlohmann::json::object();
  if (!doc["paths"].contains("output")) doc["paths"]["output"] = "";
  return cli::parse_run_config(doc);
}

PanelDataset load(const cli::RunConfig& rc) {
  PanelDataset d = ingest_microdata(rc.paths.data, rc.schema, rc.mode);
  d = scale_weights(d);
  if (rc.mode == ResponseMode::kBinary && rc.model == cli::ModelKind::kTulm) d = build_prev_covariate(d);
  return d;
}

py::dict draws_dict(const PosteriorDraws& d) {
  py::dict out;
  out["mode"] = to_string(d.mode);
  out["n_areas"] = d.n_areas;
  out["n_weeks"] = d.n_weeks;
  out["first_week"] = d.first_week;
  out["covariate_names"] = d.covariate_names;
  out["beta"] = d.beta;
  out["eta"] = d.eta;
  out["phi"] = d.phi;
  out["sigma2_eta1"] = d.sigma2_eta1;
  out["sigma2_eta"] = d.sigma2_eta;
  if (d.mode == ResponseMode::kGaussian) {
    out["rho"] = d.rho;
    out["sigma2"] = d.sigma2;
    out["rho_acceptance"] = d.rho_acceptance;
  }
  return out;
}

template <class F>
Eigen::VectorXd draw_n(int n, std::uint64_t seed, std::uint64_t stream, F f) {
  if (n < 0) throw ConfigError("size must be non-negative");
  RngStream r(seed, stream);
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x(i) = f(r);
  return x;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bayesian unit-level longitudinal small area estimation";

  auto base = py::register_exception<Error>(m, "TulmError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def("interval_score", &interval_score, py::arg("lower"), py::arg("upper"), py::arg("x"),
        py::arg("alpha"));
  m.def("box_cox", py::overload_cast<double, double>(&box_cox), py::arg("y"), py::arg("lam"));
  m.def("inverse_box_cox", &inverse_box_cox, py::arg("z"), py::arg("lam"));

  m.def(
      "polya_gamma",
      [](double b, double c, int size, std::uint64_t seed, std::uint64_t stream, int truncation) {
        return draw_n(size, seed, stream, [&](RngStream& r) { return draw_polya_gamma(b, c, r, truncation); });
      },
      py::arg("b"), py::arg("c"), py::arg("size"), py::arg("seed"), py::arg("stream") = 0,
      py::arg("truncation") = kPolyaGammaTruncation);
  m.def(
      "truncated_normal",
      [](double mean, double var, double lo, double hi, int size, std::uint64_t seed, std::uint64_t stream) {
        return draw_n(size, seed, stream, [&](RngStream& r) { return draw_truncated_normal(mean, var, lo, hi, r); });
      },
      py::arg("mean"), py::arg("var"), py::arg("lo"), py::arg("hi"), py::arg("size"), py::arg("seed"),
      py::arg("stream") = 0);
  m.def(
      "inverse_gamma",
      [](double shape, double rate, int size, std::uint64_t seed, std::uint64_t stream) {
        return draw_n(size, seed, stream, [&](RngStream& r) { return draw_inverse_gamma(shape, rate, r); });
      },
      py::arg("shape"), py::arg("rate"), py::arg("size"), py::arg("seed"), py::arg("stream") = 0);

  m.def(
      "fit",
      [](const std::string& config, std::uint64_t seed) {
        const auto rc = parse_config(config);
        const PanelDataset data = load(rc);
        std::vector<PosteriorDraws> draws;
        {
          py::gil_scoped_release release;
          RngStream rng = RngStream(seed, 0).split(0);
          if (rc.model == cli::ModelKind::kTulm) {
            draws.push_back(rc.mode == ResponseMode::kGaussian ? run_gtulm(data, rc.sampler, rng)
                                                               : run_btulm(data, rc.sampler, rng));
          } else {
            draws = rc.mode == ResponseMode::kGaussian ? run_gbulm_per_week(data, rc.sampler, rng, rc.threads)
                                                       : run_bbulm_per_week(data, rc.sampler, rng, rc.threads);
          }
        }
        py::list out;
        for (const auto& d : draws) out.append(draws_dict(d));
        return out;
      },
      py::arg("config"), py::arg("seed"),
      "Fits the configured model; returns one dict of draws (one per week for bulm).");

  m.def(
      "direct",
      [](const std::string& config) {
        const auto rc = parse_config(config);
        PanelDataset data = ingest_microdata(rc.paths.data, rc.schema, rc.mode);
        std::vector<DirectEstimate> est;
        if (rc.paths.cells.empty()) {
          est = direct_estimate(data, std::vector<double>{}, rc.filter);
        } else {
          est = direct_estimate(data, ingest_cells(rc.paths.cells, rc.schema), rc.filter);
        }
        py::list out;
        for (const auto& e : est) {
          py::dict row;
          row["area"] = e.area;
          row["week"] = e.week;
          row["estimate"] = e.point;
          row["se"] = e.se;
          row["n"] = e.n_responses;
          row["defined"] = e.defined;
          row["variant"] = to_string(e.variant);
          out.append(row);
        }
        return out;
      },
      py::arg("config"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
