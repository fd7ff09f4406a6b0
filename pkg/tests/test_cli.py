"""Configuration parsing, exit codes, and the artifact pipeline."""
from __future__ import annotations

import hashlib
import json

import pytest

from folcomp.cli import config_hash, main, parse_config
from folcomp.errors import ConfigError

from conftest import EXAMPLES, load_example

SMALL_GRID = {"M": 40, "p": 2.0, "x_resolution": 9}


def _write_config(tmp_path, name="config.json", **over):
    doc = {"map": str(EXAMPLES / "perturbed_model.json"), "grid": dict(SMALL_GRID)}
    doc.update(over)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(autouse=True)
def _no_env_outdir(monkeypatch):
    monkeypatch.delenv("FOLCOMP_OUT", raising=False)


def test_parse_config_defaults():
    config = parse_config({"map": load_example("pure_model.json")})
    assert config["grid"] == {"M": 200, "p": 2.0, "x_resolution": 41}
    assert config["solver"] == {"tol": 1e-10, "max_iter": 10000}
    assert config["jets"] == {"order": 2, "mode": "auto"}
    assert config["outputs"]["formats"] == ["csv", "json"]
    assert config["seed"] == 0


def test_parse_config_resolves_map_paths():
    config = parse_config({"map": "pure_model.json"}, config_dir=str(EXAMPLES))
    assert config["map"]["alpha"] == 1.5
    assert config["map"]["phi_coeffs"] == []


def test_parse_config_rejections():
    pure = load_example("pure_model.json")
    bad = [
        [],                                        # not an object
        {"map": pure, "typo": 1},                  # unknown top-level key
        {},                                        # missing map
        {"map": 7},                                # map of the wrong type
        {"map": pure, "grid": {"M": 40, "q": 1}},  # unknown section key
        {"map": pure, "grid": {"M": 1}},
        {"map": pure, "solver": {"tol": 0.0}},
        {"map": pure, "solver": {"max_iter": 0}},
        {"map": pure, "jets": {"order": 0}},
        {"map": pure, "jets": {"order": 3}},       # beyond the map class k = 2
        {"map": pure, "jets": {"mode": "magic"}},
        {"map": pure, "outputs": {"formats": ["csv", "pdf"]}},
        {"map": pure, "seed": -1},
        {"map": pure, "seed": 0.5},
    ]
    for doc in bad:
        with pytest.raises(ConfigError):
            parse_config(doc)


def test_exact_mode_caps_at_order_two():
    smooth = dict(load_example("pure_model.json"), k=3, gamma=2.5)
    parse_config({"map": smooth, "jets": {"order": 3, "mode": "auto"}})
    with pytest.raises(ConfigError):
        parse_config({"map": smooth, "jets": {"order": 3, "mode": "exact"}})


def test_config_hash_ignores_output_directory():
    doc = {"map": load_example("pure_model.json")}
    base = config_hash(parse_config(doc))
    moved = parse_config(dict(doc, outputs={"directory": "/elsewhere"}))
    assert config_hash(moved) == base
    tightened = parse_config(dict(doc, solver={"tol": 1e-12}))
    assert config_hash(tightened) != base


def test_check_pass_writes_artifacts(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["check", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads((out / "check.json").read_text())
    assert report["verdict"] == "PASS"
    first = (out / "check.txt").read_text().splitlines()[0]
    assert first == "verdict: PASS"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "check"
    for name, digest in manifest["artifacts"].items():
        body = (out / name).read_bytes()
        assert hashlib.sha256(body).hexdigest() == digest
    assert set(manifest["artifacts"]) == {"check.json", "check.txt"}


def test_failing_model_exit_codes(tmp_path):
    cfg = _write_config(tmp_path, map=str(EXAMPLES / "failing_model.json"))
    out = tmp_path / "out"
    assert main(["check", "--config", cfg, "--out", str(out)]) == 2
    assert "failed: L2" in (out / "check.txt").read_text()
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 2
    assert (out / "field.csv").exists() is False
    # --force runs anyway and hits the genuine runtime failure downstream
    assert main(["solve", "--config", cfg, "--out", str(out), "--force"]) == 3


def test_malformed_invocations_exit_4(tmp_path):
    cfg = _write_config(tmp_path)
    assert main(["frobnicate"]) == 4
    assert main(["solve"]) == 4                               # --config required
    assert main(["solve", "--config", str(tmp_path / "absent.json")]) == 4
    assert main(["solve", "--config", cfg, "--threads", "0"]) == 4
    assert main(["solve", "--config", cfg, "--tol", "-1"]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text('{"map": {}, "oops": 1}')
    assert main(["check", "--config", str(bad)]) == 4
    bad.write_text("{not json")
    assert main(["check", "--config", str(bad)]) == 4


def test_exhausted_iteration_budget_exits_3(tmp_path):
    cfg = _write_config(tmp_path, solver={"tol": 1e-13, "max_iter": 2})
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "out")]) == 3


def test_env_var_overrides_out_flag(tmp_path, monkeypatch):
    cfg = _write_config(tmp_path)
    env_dir = tmp_path / "env_out"
    monkeypatch.setenv("FOLCOMP_OUT", str(env_dir))
    assert main(["check", "--config", cfg, "--out", str(tmp_path / "ignored")]) == 0
    assert (env_dir / "check.json").exists()
    assert not (tmp_path / "ignored").exists()


def test_solve_and_jets_artifacts(tmp_path):
    cfg = _write_config(tmp_path)
    out = tmp_path / "solve_out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "field.csv").exists() and (out / "field_header.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["budgets"]["final_distance"] <= 1e-10
    assert manifest["verdicts"]["verdict"] == "PASS"

    out = tmp_path / "jets_out"
    assert main(["jets", "--config", cfg, "--out", str(out)]) == 0
    for j in range(3):
        assert (out / ("jet_level_%d.csv" % j)).exists()
    jets_doc = json.loads((out / "jets.json").read_text())
    assert jets_doc["order"] == 2
    assert jets_doc["modes"] == ["exact", "exact", "exact"]


def test_leaves_and_reduce_artifacts(tmp_path):
    cfg = _write_config(tmp_path, map=str(EXAMPLES / "pure_model.json"),
                        outputs={"formats": ["csv", "json", "svg"]})
    out = tmp_path / "leaves_out"
    assert main(["leaves", "--config", cfg, "--out", str(out),
                 "--base", "0.2:0.4"]) == 0
    doc = json.loads((out / "leaves.json").read_text())
    assert len(doc["leaves"]) == 1
    assert doc["leaves"][0]["invariance_deviation"] == 0.0
    assert (out / "leaf_0.csv").exists()
    assert (out / "leaves.svg").read_bytes().startswith(b"<?xml")

    out = tmp_path / "reduce_out"
    assert main(["reduce", "--config", cfg, "--out", str(out)]) == 0
    record = json.loads((out / "reduced_map.json").read_text())
    assert float(record["alpha_fit"]) == pytest.approx(1.5, abs=1e-6)
    assert (out / "gbar.svg").read_bytes().startswith(b"<?xml")


def test_bad_leaf_base_exits_4(tmp_path):
    cfg = _write_config(tmp_path, map=str(EXAMPLES / "pure_model.json"))
    out = str(tmp_path / "out")
    assert main(["leaves", "--config", cfg, "--out", out, "--base", "0.2"]) == 4
    assert main(["leaves", "--config", cfg, "--out", out, "--base", "a:b"]) == 4
    assert main(["leaves", "--config", cfg, "--out", out,
                 "--base", "0.1,0.2:0.3"]) == 4


def test_demo_runs_clean(tmp_path):
    out = tmp_path / "demo_out"
    assert main(["demo", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["demo_pass"] is True
    assert manifest["demo_checks"]["zero_field_sup"] == 0.0
    assert (out / "reduced_map.csv").exists()
