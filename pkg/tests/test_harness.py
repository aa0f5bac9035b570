import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from starcf.cli import SE_COLUMNS, main
from starcf.harness import (RESULT_COLUMNS, TRACE_COLUMNS, Check, ConfigError, ExperimentSpec,
                            ResultRow, apply_axis, fmt, load_coefficients, load_config,
                            parse_variant, run_sweep, validate, variant_setup, worker_count)
from starcf.optimizer import GdSettings
from starcf.scenario import SystemConfig

TINY = ["--set", "M=2", "--set", "K=2", "--set", "K_r=1", "--set", "K_t=1",
        "--set", "L=4", "--set", "L_h=2", "--set", "L_v=2", "--set", "tau_p=1"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- config

def test_load_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"M": 6, "rho_db": 3.0}))
    cfg = load_config(str(p), {"rho_db": 7.0})
    assert cfg.M == 6 and cfg.rho_db == 7.0
    p.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        load_config(str(p))
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(str(p))
    with pytest.raises(ConfigError):
        load_config(None, {"K_r": 9})


def test_apply_axis_keeps_fields_consistent():
    cfg = SystemConfig()
    c = apply_axis(cfg, "L", 32)
    assert (c.L, c.L_h * c.L_v) == (32, 32)
    c = apply_axis(cfg, "K", 5)
    assert c.K_r + c.K_t == 5
    assert apply_axis(cfg, "a", 0.5).a == 0.5


def test_parse_variant():
    assert parse_variant("equal") == ("equal", {})
    assert parse_variant("equal@a=1.5,rho_db=0") == ("equal", {"a": 1.5, "rho_db": 0})
    with pytest.raises(ConfigError):
        parse_variant("zf")
    with pytest.raises(ConfigError):
        parse_variant("equal@a=oops")


def test_fmt_nine_digits():
    assert fmt(1 / 3) == "0.333333333"
    assert fmt(np.float64(123456789.123)) == "123456789"
    assert fmt(3) == "3" and fmt("r") == "r"


def test_worker_count(monkeypatch):
    monkeypatch.setenv("STARCF_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("STARCF_WORKERS", "0")
    with pytest.raises(ConfigError):
        worker_count()
    monkeypatch.delenv("STARCF_WORKERS")
    assert worker_count() >= 1


# ---------------------------------------------------------------- ExperimentSpec validation

@pytest.mark.parametrize("kw", [dict(variants=[]), dict(values=[3.0, 1.0]),
                                dict(values=[1.0, np.inf]), dict(axis="tau_c"),
                                dict(metrics=["rate"]), dict(n_topologies=0),
                                dict(variants=["bogus"])])
def test_spec_rejects(kw):
    base = dict(base=SystemConfig(), axis="p_p", values=[0.0, 10.0], variants=["equal"])
    base.update(kw)
    with pytest.raises(ConfigError):
        ExperimentSpec(**base)


def test_result_row_rejects_negative_se():
    with pytest.raises(ValueError):
        ResultRow("M", 1.0, "equal", "se_sum", 1.0, -0.1, 2, 0.0, 0)


def test_cris_odd_l_fails_fast():
    with pytest.raises(ConfigError):
        variant_setup(SystemConfig(L=9, L_h=3, L_v=3), "cris")


def test_ms_variant_is_binary():
    _, c = variant_setup(SystemConfig(L=4, L_h=2, L_v=2), "ms", GdSettings(iter_max=5))
    assert c.is_feasible("MS")


# ---------------------------------------------------------------- sweep

def tiny_cfg(**kw):
    return SystemConfig(M=2, K=2, K_r=1, K_t=1, L=4, L_h=2, L_v=2, tau_p=1, **kw)


def test_sweep_rows_and_csv(tmp_path):
    out = tmp_path / "s.csv"
    spec = ExperimentSpec(tiny_cfg(seed=3), "p_p", [0.0, 20.0], ["equal", "error_free"],
                          ["nmse", "se_sum", "se_per_user"], 3, output=str(out))
    rows = run_sweep(spec, workers=1)
    table = read_csv(out)
    assert tuple(table[0]) == RESULT_COLUMNS
    assert len(table) - 1 == len(rows) == 2 * 2 * (2 + 2)
    keys = {(r.axis_value, r.variant, r.metric) for r in rows}
    assert len(keys) == len(rows)
    for r in rows:
        assert r.n_topologies == 3 and r.seed == 3 and r.se >= 0
    for line in table[1:]:
        mean = line[RESULT_COLUMNS.index("mean")]
        assert len(mean.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) <= 9
    nm = {r.axis_value: r.mean for r in rows if r.variant == "equal" and r.metric == "nmse"}
    assert nm[20.0] <= nm[0.0]


def test_sweep_independent_of_worker_count():
    spec = ExperimentSpec(tiny_cfg(), "M", [1, 2], ["equal", "gd"], ["se_sum", "nmse"], 2,
                          gd=GdSettings(iter_max=5))
    a = run_sweep(spec, workers=1)
    b = run_sweep(spec, workers=2)
    strip = lambda rows: [tuple(c for i, c in enumerate(r.cells())
                                if RESULT_COLUMNS[i] != "runtime_s") for r in rows]
    assert strip(a) == strip(b)


def test_sweep_mc_mode():
    spec = ExperimentSpec(tiny_cfg(), "p_p", [20.0], ["equal"], ["nmse", "se_avg"], 1,
                          n_mc_blocks=300)
    rows = run_sweep(spec, workers=1)
    assert {r.metric for r in rows} == {"nmse", "se_avg"}
    assert all(r.se == 0 for r in rows)


# ---------------------------------------------------------------- validate

def test_validate_passes_and_detects_fault():
    cfg = tiny_cfg()
    checks = validate(cfg, n_blocks=4000, n_se_blocks=8000, grad_points=1)
    assert all(isinstance(c, Check) for c in checks)
    assert all(c.passed for c in checks), [c.line() for c in checks]
    bad = validate(cfg, n_blocks=4000, n_se_blocks=500, grad_points=1, fault="Q2")
    nm = [c for c in bad if c.name.startswith("NMSE vs MC")]
    assert len(nm) == 1 and not nm[0].passed
    assert nm[0].line().startswith("FAIL")


# ---------------------------------------------------------------- CLI

def test_cli_exit_codes(tmp_path, capsys):
    assert main(["se", "--set", "M=x"]) == 2
    assert main(["se", "--set", "nope=1"]) == 2
    assert main(["se", "--set", "M"]) == 2
    assert main(["se", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["sweep", "--axis", "p_p", "--values", "10,0", "-o", str(tmp_path / "x.csv")]) == 2
    assert main(["sweep", "--axis", "p_p", "--values", "0", "--variant", "zf",
                 "-o", str(tmp_path / "x.csv")]) == 2
    assert main(["validate", *TINY, "--blocks", "2000", "--se-blocks", "300",
                 "--grad-points", "1", "--fault", "Q2"]) == 1
    out = capsys.readouterr().out
    assert "VALIDATION FAILED" in out and "FAIL  NMSE" in out


def test_cli_validate_ok(tmp_path, capsys):
    rep = tmp_path / "rep.txt"
    assert main(["validate", *TINY, "--blocks", "4000", "--se-blocks", "8000",
                 "--grad-points", "1", "-o", str(rep)]) == 0
    text = rep.read_text()
    assert text.startswith("seed 0") and text.rstrip().endswith("ALL PASS")


@pytest.mark.parametrize("protocol", ["ES", "MS"])
def test_cli_optimize(tmp_path, protocol):
    cj, tr = tmp_path / "c.json", tmp_path / "t.csv"
    assert main(["optimize", *TINY, "--set", f'protocol="{protocol}"', "--seed", "4",
                 "--iter-max", "20", "--coeffs", str(cj), "--trace", str(tr)]) == 0
    c = load_coefficients(cj)
    again = tmp_path / "c2.json"
    from starcf.harness import save_coefficients
    save_coefficients(again, c)
    assert again.read_text() == cj.read_text()
    assert c.is_feasible(protocol, tol=1e-12)
    if protocol == "MS":
        assert set(np.unique(np.concatenate([c.u_t, c.u_r]))) <= {0.0, 1.0}
    rows = read_csv(tr)
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert float(rows[-1][1]) <= float(rows[1][1])


def test_cli_se(tmp_path):
    out = tmp_path / "se.csv"
    assert main(["se", *TINY, "-o", str(out)]) == 0
    rows = read_csv(out)
    assert tuple(rows[0]) == SE_COLUMNS
    assert len(rows) == 1 + 2 * 2
    cj = tmp_path / "c.json"
    main(["optimize", *TINY, "--iter-max", "3", "--coeffs", str(cj), "--trace",
          str(tmp_path / "t.csv")])
    assert main(["se", *TINY, "--coeffs", str(cj)]) == 0
    assert main(["se", "--coeffs", str(cj)]) == 2            # L mismatch


def test_cli_sweep(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", *TINY, "--axis", "a", "--values", "0.3,1.5", "--variant", "equal",
                 "--variant", "equal@rho_db=0", "--metrics", "se_sum", "--topologies", "2",
                 "--workers", "1", "-o", str(out)]) == 0
    rows = read_csv(out)[1:]
    assert [r[2] for r in rows] == ["equal", "equal@rho_db=0"] * 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "starcf", "se", "--set", "L=7"],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "config error" in r.stderr
