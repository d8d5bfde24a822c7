import csv
import json

import jsonschema
import numpy as np
import pytest

from bifhunter import cli, verify
from bifhunter.bo import RunFailure
from bifhunter.config import (SEED_OVERRIDE_ENV, ConfigError, load_config, load_schema,
                              parse_config, shipped_configs)
from bifhunter.verify import Property

from conftest import tiny_config


def _read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("name", shipped_configs())
def test_shipped_configs_validate(name):
    cfg = load_config(name, env={})
    assert cfg.name == name
    assert len(cfg.seeds) == cfg.raw.get("ensemble", {}).get("n_runs", 1)
    assert str(cfg.output_dir) == f"results/{name}"


def test_seed_override():
    cfg = load_config("budworm_fold", env={SEED_OVERRIDE_ENV: "100"})
    assert cfg.seed_override == 100 and cfg.seeds == list(range(100, 120))
    with pytest.raises(ConfigError):
        load_config("budworm_fold", env={SEED_OVERRIDE_ENV: "abc"})


def test_invalid_config_messages(tmp_path):
    doc = json.loads(tiny_config(tmp_path).read_text())
    doc["budget"] = 0
    with pytest.raises(ConfigError, match="budget"):
        parse_config(doc, env={})
    doc["budget"] = 3
    doc["comparison"] = [1]
    with pytest.raises(ConfigError):
        parse_config(doc, env={})
    doc.pop("comparison")
    doc["bif_kind"] = "HopfTrace"
    doc["system"] = {"id": "Brusselator"}
    doc["reference"]["x_ref"] = [1.0]
    with pytest.raises(ConfigError, match="x_ref"):
        parse_config(doc, env={})


def test_missing_config_exit_code(capsys):
    assert cli.main(["run", "does/not/exist.json"]) == 2
    assert "does/not/exist.json" in capsys.readouterr().err


def test_dry_run_touches_nothing(tmp_path, capsys):
    path = tiny_config(tmp_path)
    assert cli.main(["run", str(path), "--dry-run"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["resolved"]["budget"] == 4
    assert not (tmp_path / "out").exists()


def test_run_outputs_and_determinism(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_OVERRIDE_ENV, raising=False)
    path = tiny_config(tmp_path, ensemble={"n_runs": 2}, report_bifurcation_diagram=True)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert cli.main(["run", str(path), "--output-dir", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == ["branch_seed3.csv", "branch_seed4.csv", "convergence.csv", "summary.json",
                     "timing.csv", "trace_seed3.csv", "trace_seed4.csv"]
    for name in names:
        if name.endswith(".csv") and name != "timing.csv":
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    a, b = (json.loads((o / "summary.json").read_text()) for o in outs)
    assert a.pop("metadata") and b.pop("metadata")
    assert a == b
    assert _read(outs[0] / "trace_seed3.csv")[0] == ["iter", "x1", "p", "g1", "delta", "lcb",
                                                     "fallback"]
    assert _read(outs[0] / "convergence.csv")[0] == ["iter", "median", "q25", "q75"]
    jsonschema.validate(a | {"metadata": {"timestamp": "t", "version": "v"}}, load_schema("summary"))


def test_single_run_summary(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_OVERRIDE_ENV, raising=False)
    path = tiny_config(tmp_path)
    assert cli.main(["run", str(path)]) == 0
    doc = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert set(doc) >= {"result", "converged", "iterations", "abs_param_error", "metadata"}
    assert doc["abs_param_error"] == pytest.approx(abs(doc["result"]["p_b"] - 0.2619243415482404))
    assert doc["seed_override"] is None
    assert {"timestamp", "version", "wall_s"} <= set(doc["metadata"])


def test_seed_override_is_flagged(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_OVERRIDE_ENV, "41")
    path = tiny_config(tmp_path, budget=2)
    assert cli.main(["run", str(path)]) == 0
    doc = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert doc["seed_override"] == 41 and doc["seeds"] == [41]
    assert (tmp_path / "out" / "trace_seed41.csv").exists()


def test_run_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise RunFailure("iteration 1: singular")

    monkeypatch.setattr(cli, "run_bo", boom)
    assert cli.main(["run", str(tiny_config(tmp_path))]) == 3
    assert "singular" in capsys.readouterr().err


def test_compare_outputs(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_OVERRIDE_ENV, raising=False)
    path = tiny_config(tmp_path, budget=3, comparison=[2, 3], ensemble={"n_runs": 2})
    out = tmp_path / "cmp"
    assert cli.main(["compare", str(path), "--output-dir", str(out)]) == 0
    rows = _read(out / "compare.csv")
    assert rows[0] == ["iter", "analytic", "mc_2", "mc_3"]
    assert _read(out / "traces" / "mc_2_seed3.csv")[0][0] == "method"
    timing = _read(out / "compare_timing.csv")
    assert timing[0] == ["method", "seed", "iter", "acq_ms"]
    assert {r[0] for r in timing[1:]} == {"analytic", "mc_2", "mc_3"}
    doc = json.loads((out / "compare_summary.json").read_text())
    assert set(doc["metadata"]["acq_ms_ratio_to_analytic"]) == {"mc_2", "mc_3"}
    # matched seeds: the analytic column does not depend on the Monte Carlo columns
    path2 = tiny_config(tmp_path, budget=3, comparison=[2], ensemble={"n_runs": 2})
    out2 = tmp_path / "cmp2"
    assert cli.main(["compare", str(path2), "--output-dir", str(out2)]) == 0
    rows2 = _read(out2 / "compare.csv")
    assert [r[1] for r in rows2] == [r[1] for r in rows]


def test_compare_needs_comparison_and_reference(tmp_path, capsys):
    assert cli.main(["compare", str(tiny_config(tmp_path))]) == 2
    doc = json.loads(tiny_config(tmp_path, comparison=[2]).read_text())
    doc.pop("reference")
    (tmp_path / "noref.json").write_text(json.dumps(doc))
    assert cli.main(["compare", str(tmp_path / "noref.json")]) == 2


def test_compare_rejects_monte_carlo_on_epileptor(capsys):
    assert cli.main(["compare", "epileptor_fold", "--dry-run"]) == 2


def test_n_runs_bounds(tmp_path):
    assert cli.main(["run", str(tiny_config(tmp_path)), "--n-runs", "2", "--dry-run"]) == 2


def test_verify_filter_and_exit_codes(monkeypatch, capsys):
    assert cli.main(["verify", "--filter", "eigen", "--dry-run"]) == 0
    listed = capsys.readouterr().out.strip().splitlines()
    assert len(listed) == 1 and listed[0].startswith("eigen_real_variance")
    assert cli.main(["verify", "--filter", "nothing-matches"]) == 2
    good = Property("always_ok", "demo", 1.0, lambda b: (0.5, ""), "passes")
    bad = Property("always_bad", "demo", 1.0, lambda b: (2.0, "worst x"), "fails")
    monkeypatch.setattr(verify, "PROPERTIES", [good])
    assert cli.main(["verify"]) == 0
    monkeypatch.setattr(verify, "PROPERTIES", [good, bad])
    assert cli.main(["verify"]) == 1
    err = capsys.readouterr().err
    assert "always_bad" in err and "2" in err


def test_configs_listing(capsys):
    assert cli.main(["configs"]) == 0
    assert "brusselator_hopf" in capsys.readouterr().out.split()
