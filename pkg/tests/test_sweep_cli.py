import json
import math

import numpy as np
import pytest
from pydantic import ValidationError

from bcexp import cli
from bcexp.channel import RatePair, make_degraded_bsc
from bcexp.errors import ConfigError, InfeasibleError
from bcexp.gallager import single_user_exponent
from bcexp.sweep import (ConstraintConfig, EnumeratorConfig, Evaluator, GallagerGridConfig, SweepConfig,
                         emit_plot, optimize_beta, read_sweep_csv, rows_to_csv, run_sweep, sweep_rows)

CH = make_degraded_bsc(0.05, 0.3)
SMALL = {
    "name": "small",
    "rates": {"r_y": 0.0001, "r_yz": {"start": 0.0, "stop": 0.06, "points": 3}},
    "exponents": ["E_z1", "E_gz"],
    "beta": {"values": [0.0, 0.05, 0.1, 0.2]},
    "constraint": {"exponent": "E_y1"},
}


def evaluator():
    return Evaluator(CH, GallagerGridConfig().settings(), EnumeratorConfig().settings())


# --- configuration ------------------------------------------------------------------


def test_config_requires_exponents():
    doc = dict(SMALL, exponents=[])
    with pytest.raises(ValidationError):
        SweepConfig.model_validate(doc)


def test_config_rejects_unknown_fields_and_bad_grids():
    with pytest.raises(ValidationError):
        SweepConfig.model_validate(dict(SMALL, colour="red"))
    with pytest.raises(ValidationError):
        SweepConfig.model_validate(dict(SMALL, rates={"r_y": 0.1, "r_yz": 0.1}))
    with pytest.raises(ValidationError):
        SweepConfig.model_validate(dict(SMALL, beta={"values": [0.2, 0.1]}))
    with pytest.raises(ValidationError):
        SweepConfig.model_validate(dict(SMALL, beta={"values": [0.1, 0.7]}))
    with pytest.raises(ValidationError):
        SweepConfig.model_validate(dict(SMALL, exponents=["E_z1", "E_z1"]))


def test_config_defaults():
    cfg = SweepConfig.model_validate(SMALL)
    assert cfg.target_name == "E_z1"
    assert cfg.constraint_name == "E_y1"
    assert cfg.rates.swept == "r_yz"
    assert len(cfg.rates.points()) == 3
    full = SweepConfig.model_validate({k: v for k, v in SMALL.items() if k != "beta"})
    np.testing.assert_allclose(full.beta.grid(), np.arange(65) / 128)


# --- beta optimization ---------------------------------------------------------------


def test_optimize_beta_picks_smallest_beta_with_positive_strong_exponent():
    betas = np.arange(0, 17) / 128
    res = optimize_beta(RatePair(1e-4, 0.02), ConstraintConfig(exponent="E_y1"), ["E_z1"], evaluator(), betas)
    # beta = 0 leaves no private layer; the weak exponent only decreases with beta
    assert res["beta_star"] == pytest.approx(1 / 128)
    assert res["exponents"]["E_y1"].value > 1e-6


def test_optimize_beta_fraction_uses_single_user_reference():
    rates = RatePair(0.1, 0.005)
    ev = evaluator()
    res = optimize_beta(rates, ConstraintConfig(exponent="E_z1", fraction_of_max=0.25), ["E_y1"], ev,
                        np.arange(0, 65, 8) / 128)
    ref = single_user_exponent(rates.r_yz, np.array([0.5, 0.5]), CH.p3)
    assert res["threshold"] == pytest.approx(ref / 4, abs=1e-12)
    assert res["exponents"]["E_z1"].value >= res["threshold"] - 1e-9


def test_optimize_beta_infeasible():
    with pytest.raises(InfeasibleError):
        optimize_beta(RatePair(0.1, 0.01), ConstraintConfig(exponent="E_z1", threshold=0.5), ["E_y1"],
                      evaluator(), [0.0, 0.25, 0.5])


def test_evaluator_names():
    ev = evaluator()
    rates = RatePair(0.05, 0.01)
    vals = {n: ev(n, rates, 0.1).value for n in ("E_gz", "E_z1", "E_gy", "E_y1")}
    assert vals["E_z1"] >= vals["E_gz"] - 1e-12
    assert vals["E_y1"] >= vals["E_gy"] - 1e-3


# --- sweep output ------------------------------------------------------------------


def test_sweep_rows_and_csv(tmp_path):
    cfg = SweepConfig.model_validate(SMALL)
    rows = sweep_rows(cfg)
    assert [r["rate_ryz"] for r in rows] == [0.0, 0.03, 0.06]
    assert all(r["status"] == "ok" for r in rows)
    text = rows_to_csv(rows, cfg, "nats")
    header = text.splitlines()[0].split(",")
    assert header[:7] == ["rate_ry", "rate_ryz", "beta_star", "beta_jump", "status", "E_z1", "E_gz"]
    for r in rows:
        assert r["E_z1"] >= r["E_gz"] - 1e-12
    bits = rows_to_csv(rows, cfg, "bits").splitlines()
    nats = text.splitlines()
    i = header.index("E_z1")
    for a, b in zip(nats[1:], bits[1:]):
        assert float(b.split(",")[i]) == pytest.approx(float(a.split(",")[i]) / math.log(2), rel=1e-14)
        assert b.split(",")[2] == a.split(",")[2]  # beta is not a rate


def test_sweep_marks_infeasible_rows(tmp_path):
    doc = dict(SMALL, constraint={"exponent": "E_y1", "threshold": 5.0})
    cfg = SweepConfig.model_validate(doc)
    rows = sweep_rows(cfg)
    assert all(r["status"] == "infeasible" for r in rows)
    path = run_sweep(cfg, out=tmp_path / "inf.csv")
    assert path.read_text().splitlines()[1].split(",")[4] == "infeasible"


def test_sweep_is_byte_identical(tmp_path):
    cfg = SweepConfig.model_validate(SMALL)
    a = run_sweep(cfg, out=tmp_path / "a.csv").read_bytes()
    b = run_sweep(cfg, out=tmp_path / "b.csv").read_bytes()
    c = run_sweep(cfg, out=tmp_path / "c.csv", threads=2).read_bytes()
    assert a == b == c


def test_beta_jump_flag(monkeypatch):
    from bcexp import sweep as sw

    indices = iter([3, 3, 4, 9, None, 9])
    monkeypatch.setattr(sw, "_sweep_point", lambda task: {"rate_ry": task[1].r_y, "rate_ryz": task[1].r_yz,
                                                          "beta_index": next(indices)})
    cfg = SweepConfig.model_validate(dict(SMALL, rates={"r_y": 0.0, "r_yz": {"values": list(range(6))}}))
    # a jump is a move of more than one beta step between neighbouring feasible rows
    assert [r["beta_jump"] for r in sweep_rows(cfg)] == [0, 0, 0, 1, 0, 0]


# --- plots -------------------------------------------------------------------------------


def write_csv(path, rows):
    path.write_text("\n".join(",".join(map(str, r)) for r in rows) + "\n")
    return path


def test_plot_two_curves(tmp_path):
    csv_path = write_csv(tmp_path / "two.csv", [
        ["rate_ry", "rate_ryz", "beta_star", "beta_jump", "status", "E_z1", "E_gz"],
        [1e-4, 0.0, 0.05, 0, "ok", 0.04, 0.03],
        [1e-4, 0.02, 0.05, 0, "ok", 0.02, 0.01],
    ])
    gp = emit_plot(csv_path)
    script = gp.read_text()
    assert script.count("title") == 2
    assert "'two.csv' skip 1 using 2:6" in script
    assert "dt 3" in script and "dt 1" in script  # baseline dotted, new bound solid
    svg = gp.with_suffix(".svg").read_text()
    assert svg.count("<polyline") == 2 and "E_z,1" in svg and "E_g,z" in svg


def test_plot_single_row_marker(tmp_path):
    csv_path = write_csv(tmp_path / "one.csv", [
        ["rate_ry", "rate_ryz", "status", "E_y1"],
        [0.1, 0.005, "ok", 0.2],
    ])
    gp = emit_plot(csv_path, out=tmp_path / "plots" / "one")
    assert gp.parent.name == "plots"
    assert "'../one.csv'" in gp.read_text()
    assert "<circle" in gp.with_suffix(".svg").read_text()


def test_read_csv_errors_carry_line_numbers(tmp_path):
    bad = write_csv(tmp_path / "bad.csv", [["rate_ry", "rate_ryz", "E_z1"], [0.0, 0.1, 0.2], [0.0, "x", 0.1]])
    with pytest.raises(ConfigError, match=r"bad.csv:3"):
        read_sweep_csv(bad)
    short = write_csv(tmp_path / "short.csv", [["rate_ry", "rate_ryz"], [0.0]])
    with pytest.raises(ConfigError, match=r"short.csv:2"):
        read_sweep_csv(short)
    with pytest.raises(ConfigError, match=r":1"):
        read_sweep_csv(write_csv(tmp_path / "nohead.csv", [["a", "b"]]))


# --- command line -------------------------------------------------------------------------


def run_cli(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def config(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_cli_capacity(tmp_path, capsys):
    path = config(tmp_path, "cap.json", {"beta": 0.1})
    code, out, _ = run_cli(["capacity", "--config", path], capsys)
    doc = json.loads(out)
    assert code == 0
    assert doc["I(X;Y|U)"] == pytest.approx(doc["r_y_max"], abs=1e-12)
    code, out, _ = run_cli(["capacity", "--config", path, "--units", "bits"], capsys)
    assert json.loads(out)["I(U;Z)"] == pytest.approx(doc["I(U;Z)"] / math.log(2), rel=1e-12)


def test_cli_exponent_to_file(tmp_path, capsys):
    path = config(tmp_path, "exp.json", {"beta": 0.1, "rates": {"r_y": 0.05, "r_yz": 0.01},
                                         "exponents": ["E_gz", "E_z1", "E_gy", "E_y1"]})
    out_path = tmp_path / "out" / "exp.json"
    code, _, _ = run_cli(["exponent", "--config", path, "--out", str(out_path)], capsys)
    assert code == 0
    doc = json.loads(out_path.read_text())
    assert set(doc["exponents"]) == {"E_gz", "E_z1", "E_gy", "E_y1"}
    assert doc["exponents"]["E_z1"]["argmax"]["rho"] >= 0


def test_cli_exit_codes(tmp_path, capsys):
    assert run_cli(["capacity", "--config", str(tmp_path / "missing.json")], capsys)[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run_cli(["capacity", "--config", str(bad)], capsys)
    assert code == 2 and "bad.json:1" in err
    assert run_cli(["capacity", "--config", config(tmp_path, "b.json", {"beta": 0.7})], capsys)[0] == 2
    assert run_cli(["capacity"], capsys)[0] == 2
    assert run_cli(["validate", "--threads", "0"], capsys)[0] == 2
    inf = config(tmp_path, "inf.json", {"rates": {"r_y": 0.1, "r_yz": 0.01}, "exponents": ["E_y1"],
                                        "beta": {"values": [0.0, 0.25, 0.5]},
                                        "constraint": {"exponent": "E_z1", "threshold": 0.5}})
    assert run_cli(["optimize-beta", "--config", inf], capsys)[0] == 3


def test_cli_optimize(tmp_path, capsys):
    path = config(tmp_path, "opt.json", {"rates": {"r_y": 0.1, "r_yz": 0.005}, "exponents": ["E_y1"],
                                         "beta": {"values": [0.0, 0.125, 0.25, 0.375, 0.5]},
                                         "constraint": {"exponent": "E_z1", "fraction_of_max": 0.25}})
    code, out, _ = run_cli(["optimize-beta", "--config", path], capsys)
    doc = json.loads(out)
    assert code == 0
    assert doc["beta_star"] in (0.0, 0.125, 0.25, 0.375, 0.5)
    assert doc["exponents"]["E_z1"]["value"] >= doc["threshold"]


def test_cli_sweep_with_plot(tmp_path, capsys):
    path = config(tmp_path, "sw.json", SMALL)
    out_csv = tmp_path / "res" / "small.csv"
    code, out, _ = run_cli(["sweep", "--config", path, "--out", str(out_csv), "--plot"], capsys)
    assert code == 0 and out.strip() == str(out_csv)
    assert out_csv.with_suffix(".gp").exists() and out_csv.with_suffix(".svg").exists()
    inf = config(tmp_path, "swi.json", dict(SMALL, constraint={"exponent": "E_y1", "threshold": 5.0}))
    assert run_cli(["sweep", "--config", inf, "--out", str(tmp_path / "i.csv")], capsys)[0] == 3


def test_cli_simulate_seeded(tmp_path, capsys):
    path = config(tmp_path, "sim.json", {"beta": 0.1, "rates": {"r_y": 0.09, "r_yz": 0.09}, "n": 8,
                                         "trials": 300})
    runs = [json.loads(run_cli(["simulate", "--config", path, "--seed", "5"], capsys)[1]) for _ in range(2)]
    assert runs[0] == runs[1]
    assert runs[0]["seed"] == 5


def test_cli_validate(tmp_path, capsys):
    path = config(tmp_path, "val.json", {"n": 10, "count": 4, "root_instances": 10})
    code, out, _ = run_cli(["validate", "--config", path, "--seed", "3"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["passed"]
    assert len(doc["root_finder"]["instances"]) == 10


def test_scenario_files_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "scenarios"
    models = {"capacity": cli.CapacityConfig, "exponent": cli.ExponentConfig, "optimize": cli.OptimizeConfig,
              "simulate": cli.SimulateConfig}
    files = sorted(root.glob("*.json"))
    assert len(files) >= 6
    for f in files:
        model = models.get(f.stem, SweepConfig)
        model.model_validate(json.loads(f.read_text()))
