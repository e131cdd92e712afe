import json
import math
import re
from pathlib import Path

import numpy as np
import pytest

import tulm

ROOT = Path(__file__).resolve().parents[2]


def example(name, **sampler):
    # example configs carry // comments; no string value in them contains "//"
    doc = json.loads(re.sub(r"//[^\n]*", "", (ROOT / "configs" / name).read_text()))
    for key in ("data", "cells"):
        if key in doc.get("paths", {}):
            doc["paths"][key] = str(ROOT / doc["paths"][key])
    doc.setdefault("sampler", {}).update(sampler)
    return doc


def test_interval_score():
    assert tulm.interval_score(0, 1, 0.5, 0.05) == 1.0
    assert tulm.interval_score(0, 1, 1.5, 0.05) == 21.0
    assert tulm.interval_score(-1, 1, -2, 0.05) == 42.0


def test_box_cox_round_trip():
    z = tulm.box_cox(100.0, -0.0863)
    assert z == pytest.approx(3.800144303264238)
    assert tulm.inverse_box_cox(z, -0.0863) == pytest.approx(100.0)
    with pytest.raises(tulm.DataError):
        tulm.box_cox(-1.0, 0.5)


def test_kernels():
    x = tulm.polya_gamma(1.0, 0.0, 20000, seed=1)
    assert isinstance(x, np.ndarray) and x.shape == (20000,)
    assert abs(x.mean() - 0.25) < 4 * math.sqrt(1 / 24 / 20000)
    np.testing.assert_array_equal(x, tulm.polya_gamma(1.0, 0.0, 20000, seed=1))
    t = tulm.truncated_normal(0.0, 1.0, -1.0, 1.0, 1000, seed=2)
    assert t.min() > -1 and t.max() < 1
    g = tulm.inverse_gamma(5.0, 2.0, 20000, seed=3)
    assert abs(g.mean() - 0.5) < 0.02


def test_fit_gaussian():
    draws = tulm.fit(example("gaussian_predict.json", n_iter=200, n_burn=50), seed=7)
    assert len(draws) == 1
    d = draws[0]
    assert d["beta"].shape == (150, len(d["covariate_names"]))
    assert d["eta"].shape == (150, d["n_areas"] * d["n_weeks"])
    assert 0.0 < d["rho_acceptance"] < 1.0
    again = tulm.fit(example("gaussian_predict.json", n_iter=200, n_burn=50), seed=7)
    np.testing.assert_array_equal(d["beta"], again[0]["beta"])


def test_fit_binary_bulm():
    doc = example("binary_predict.json", n_iter=100, n_burn=50, pg_truncation=10)
    doc["model"] = "bulm"
    draws = tulm.fit(doc, seed=3)
    assert len(draws) > 1
    assert all(d["n_weeks"] == 1 for d in draws)


def test_direct():
    rows = tulm.direct(example("direct.json"))
    assert rows and all(r["variant"] == "horvitz_thompson" for r in rows)
    assert any(r["defined"] for r in rows)


def test_errors():
    doc = example("gaussian_predict.json")
    doc["sampler"]["n_burn"] = doc["sampler"]["n_iter"]
    with pytest.raises(tulm.ConfigError):
        tulm.fit(doc, seed=1)
    doc = example("gaussian_predict.json")
    doc["paths"]["data"] = str(ROOT / "no_such_file.csv")
    with pytest.raises(tulm.TulmError):
        tulm.fit(doc, seed=1)


def test_run_cli(tmp_path):
    cfg = tmp_path / "direct.json"
    cfg.write_text(json.dumps(example("direct.json")))
    code, out, err = tulm.run_cli(["--config", str(cfg), "--output", str(tmp_path / "out")])
    assert code == 0, err
    assert (tmp_path / "out" / "manifest.json").exists()
    code, _, err = tulm.run_cli(["--config", str(tmp_path / "missing.json")])
    assert code == 2
    assert json.loads(err)["error"]["exit_code"] == 2
