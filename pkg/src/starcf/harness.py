"""Experiment orchestration: sweeps, validation campaigns and optimizer runs."""

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .montecarlo import mc_covariance, mc_nmse, uplink_mc_se, downlink_mc_se
from .optimizer import GdSettings, run_gd, grad_nmse, objective, _stack, _unstack
from .scenario import (StarRisCoefficients, SystemConfig, build_topology, equal_coefficients,
                       random_coefficients)
from .spectral import (baselines, evaluate, uplink_closed_form, downlink_closed_form,
                       uplink_power_control, downlink_power_control, moment_table)
from .statistics import compute_statistics, nmse_from

AXES = ("p_p", "M", "N", "K", "L", "rho_db", "a")
VARIANTS = ("gd", "equal", "error_free", "ris_free", "cris", "ms")
METRICS = ("nmse", "se_sum", "se_avg", "se_per_user")
RESULT_COLUMNS = ("axis", "axis_value", "variant", "metric", "mean", "se", "n_topologies",
                  "runtime_s", "seed")
TRACE_COLUMNS = ("iter", "f", "mu_theta", "mu_u")


class ConfigError(ValueError):
    pass


def fmt(x):
    """Floats with 9 significant digits; everything else verbatim."""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def worker_count():
    env = os.environ.get("STARCF_WORKERS")
    if env:
        n = int(env)
        if n < 1:
            raise ConfigError("STARCF_WORKERS must be a positive integer")
        return n
    return os.cpu_count() or 1


# ---------------------------------------------------------------- config handling

def load_config(path=None, overrides=None):
    d = {}
    if path:
        with open(path) as fh:
            d = json.load(fh)
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
    d.update(overrides or {})
    try:
        return SystemConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def _split_pairs(n):
    """Divisor pair (L_h, L_v) of n closest to square."""
    h = int(np.sqrt(n))
    while n % h:
        h -= 1
    return h, n // h


def apply_axis(cfg, axis, value):
    """Config with one sweep axis set, keeping the dependent fields consistent."""
    if axis == "L":
        L = int(value)
        L_h, L_v = _split_pairs(L)
        return cfg.replace(L=L, L_h=L_h, L_v=L_v)
    if axis == "K":
        K = int(value)
        return cfg.replace(K=K, K_r=K // 2, K_t=K - K // 2)
    if axis in ("M", "N"):
        return cfg.replace(**{axis: int(value)})
    return cfg.replace(**{axis: float(value)})


def parse_variant(text):
    """'name' or 'name@key=value,key=value' (config overrides for that variant only)."""
    name, _, rest = text.partition("@")
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}")
    over = {}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        try:
            over[k.strip()] = json.loads(v)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad override {item!r}") from e
    return name, over


# ---------------------------------------------------------------- sweep

@dataclass
class ExperimentSpec:
    base: SystemConfig
    axis: str
    values: list
    variants: list
    metrics: list = field(default_factory=lambda: ["se_sum"])
    n_topologies: int = 10
    n_mc_blocks: int = 0          # > 0 evaluates SE / NMSE by Monte Carlo instead
    output: str | None = None
    gd: GdSettings = field(default_factory=GdSettings)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}")
        if not self.values:
            raise ConfigError("empty axis")
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(np.diff(v) < 0):
            raise ConfigError("axis values must be finite and sorted")
        if not self.variants:
            raise ConfigError("empty variant list")
        for var in self.variants:
            parse_variant(var)
        bad = set(self.metrics) - set(METRICS)
        if bad or not self.metrics:
            raise ConfigError(f"metrics must be drawn from {METRICS}")
        if self.n_topologies < 1:
            raise ConfigError("n_topologies must be at least 1")
        if self.n_mc_blocks < 0:
            raise ConfigError("n_mc_blocks must be non-negative")


@dataclass
class ResultRow:
    axis: str
    axis_value: float
    variant: str
    metric: str
    mean: float
    se: float
    n_topologies: int
    runtime_s: float
    seed: int

    def __post_init__(self):
        if not self.se >= 0:
            raise ValueError("standard error must be non-negative")

    def cells(self):
        return [fmt(getattr(self, c)) for c in RESULT_COLUMNS]


def variant_setup(cfg, variant, gd=None):
    """(scenario, coefficients) for one variant at one topology."""
    name, over = parse_variant(variant)
    cfg = cfg.replace(**over) if over else cfg
    if name == "ms":
        cfg = cfg.replace(protocol="MS")
    if name == "cris" and cfg.L % 2:
        raise ConfigError("cRIS baseline needs an even number of elements")
    scn = build_topology(cfg)
    if name in ("gd", "ms"):
        settings = gd or GdSettings()
        settings = GdSettings(**{**settings.__dict__, "protocol": cfg.protocol})
        return scn, run_gd(scn, settings).coeffs
    return baselines(scn, name)


def point_metrics(scn, coeffs, metrics, n_mc_blocks=0, seed=0):
    """dict metric-name -> value for one (scenario, coefficients) pair."""
    st = compute_statistics(scn, coeffs)
    out = {}
    if "nmse" in metrics:
        if n_mc_blocks:
            out["nmse"] = mc_nmse(scn, coeffs, st, n_mc_blocks, seed)[0]
        else:
            out["nmse"] = nmse_from(st.Delta, st.Q)
    if set(metrics) - {"nmse"}:
        if n_mc_blocks:
            eta_u = uplink_power_control(st.Delta, scn.config.alpha_u)
            eta_d = downlink_power_control(st.Delta, st.Q, scn.config.alpha_d)
            se_u = uplink_mc_se(scn, coeffs, st, eta_u, "MR", n_mc_blocks, seed)[0]
            se_d = downlink_mc_se(scn, coeffs, st, eta_d, "conjugate", n_mc_blocks, seed)[0]
        else:
            rep = evaluate(scn, coeffs, st)
            se_u, se_d = rep.se_u, rep.se_d
        per_user = 0.5 * (se_u + se_d)
        if "se_sum" in metrics:
            out["se_sum"] = float(per_user.sum())
        if "se_avg" in metrics:
            out["se_avg"] = float(per_user.sum() / scn.K)
        if "se_per_user" in metrics:
            for k, v in enumerate(per_user):
                out[f"se_per_user[{k}]"] = float(v)
    return out


def _task(args):
    cfg, variant, metrics, n_mc_blocks, gd = args
    t = time.perf_counter()
    scn, coeffs = variant_setup(cfg, variant, gd)
    vals = point_metrics(scn, coeffs, metrics, n_mc_blocks, cfg.seed)
    return vals, time.perf_counter() - t


def _aggregate(samples):
    x = np.asarray(samples, dtype=float)
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def run_sweep(spec, workers=None):
    """One ResultRow per (axis value, variant, metric); topology seeds base_seed + t."""
    workers = worker_count() if workers is None else workers
    seed0 = spec.base.seed
    jobs, keys = [], []
    for v in spec.values:
        for var in spec.variants:
            for t in range(spec.n_topologies):
                cfg = apply_axis(spec.base, spec.axis, v).replace(seed=seed0 + t)
                jobs.append((cfg, var, list(spec.metrics), spec.n_mc_blocks, spec.gd))
                keys.append((v, var))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_task, jobs))
    else:
        results = [_task(j) for j in jobs]

    grouped = {}
    for key, (vals, dt) in zip(keys, results):
        g = grouped.setdefault(key, {"vals": {}, "t": 0.0})
        g["t"] += dt
        for name, x in vals.items():
            g["vals"].setdefault(name, []).append(x)
    rows = []
    for (v, var), g in grouped.items():
        for name, xs in g["vals"].items():
            mean, se = _aggregate(xs)
            rows.append(ResultRow(spec.axis, float(v), var, name, mean, se, len(xs),
                                  g["t"], seed0))
    if spec.output:
        write_rows(spec.output, rows)
    return rows


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow(r.cells())


# ---------------------------------------------------------------- optimize

def save_coefficients(path, coeffs):
    with open(path, "w") as fh:
        json.dump(coeffs.to_dict(), fh, indent=1)


def load_coefficients(path):
    with open(path) as fh:
        return StarRisCoefficients.from_dict(json.load(fh))


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for it, f, mt, mu in trace:
            w.writerow([it, fmt(f), fmt(mt), fmt(mu)])


def optimize(cfg, settings=None, coeffs_path=None, trace_path=None):
    settings = settings or GdSettings(protocol=cfg.protocol)
    scn = build_topology(cfg)
    state = run_gd(scn, settings)
    if coeffs_path:
        save_coefficients(coeffs_path, state.coeffs)
    if trace_path:
        write_trace(trace_path, state.trace)
    return state


# ---------------------------------------------------------------- validation

@dataclass
class Check:
    name: str
    statistic: float
    threshold: float
    passed: bool

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict}  {self.name}: statistic={fmt(self.statistic)} threshold={fmt(self.threshold)}"


def _max_z(closed, mc, se):
    z = np.abs(np.asarray(closed) - np.asarray(mc)) / np.maximum(np.asarray(se), 1e-300)
    return float(np.max(z))


def check_covariance(scn, coeffs, n_blocks, seed=0):
    st = compute_statistics(scn, coeffs)
    mean, se_r, se_i = mc_covariance(scn, coeffs, n_blocks, seed)
    z = max(_max_z(st.Delta.real, mean.real, se_r), _max_z(st.Delta.imag, mean.imag, se_i))
    return Check("covariance vs MC (max |z|)", z, 3.0, z <= 3.0)


def check_nmse(scn, coeffs, n_blocks, seed=0, fault=None):
    st = compute_statistics(scn, coeffs)
    Q = 2 * st.Q if fault == "Q2" else st.Q
    closed = nmse_from(st.Delta, Q)
    mc, se = mc_nmse(scn, coeffs, st, n_blocks, seed)
    z = abs(closed - mc) / se
    return Check(f"NMSE vs MC at p_p={scn.config.p_p} (|z|)", z, 3.0, z <= 3.0)


def fd_gradient(scn, coeffs, h=1e-6):
    """Central differences of the NMSE in the (theta, u) parametrization."""
    th, u = _stack(coeffs)
    f = lambda t, v: objective(scn, _unstack(t, v))[0]
    g_t = np.empty(th.size, dtype=complex)
    g_u = np.empty(u.size)
    for i in range(th.size):
        e = np.zeros(th.size)
        e[i] = h
        dx = (f(th + e, u) - f(th - e, u)) / (2 * h)
        dy = (f(th + 1j * e, u) - f(th - 1j * e, u)) / (2 * h)
        g_t[i] = 0.5 * (dx - 1j * dy)
        g_u[i] = (f(th, u + e) - f(th, u - e)) / (2 * h)
    return g_t, g_u


def check_gradient(scn, n_points=3, seed=0, tol=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        c = random_coefficients(scn.L, rng, scn.config.protocol)
        st = compute_statistics(scn, c)
        a_t, a_u = grad_nmse(scn, st, c)
        n_t, n_u = fd_gradient(scn, c)
        a, n = np.concatenate([a_t, a_u]), np.concatenate([n_t, n_u])
        worst = max(worst, np.linalg.norm(a - n) / np.linalg.norm(n))
    return Check("NMSE gradient vs central differences (rel err)", worst, tol, worst <= tol)


def check_links(scn, coeffs, n_blocks, seed=0):
    st = compute_statistics(scn, coeffs)
    table = moment_table(scn, st, coeffs)
    up = uplink_closed_form(scn, st, coeffs, table=table)
    dn = downlink_closed_form(scn, st, coeffs, table=table)
    se_u, err_u = uplink_mc_se(scn, coeffs, st, up.eta, "MR", n_blocks, seed)
    se_d, err_d = downlink_mc_se(scn, coeffs, st, dn.eta, "conjugate", n_blocks, seed)
    zu = _max_z([up.se(k) for k in range(scn.K)], se_u, err_u)
    zd = _max_z([dn.se(k) for k in range(scn.K)], se_d, err_d)
    return [Check("uplink MR+LSFD closed form vs MC (max |z|)", zu, 3.0, zu <= 3.0),
            Check("downlink conjugate closed form vs MC (max |z|)", zd, 3.0, zd <= 3.0)]


def check_power(scn, coeffs):
    st = compute_statistics(scn, coeffs)
    eta = uplink_power_control(st.Delta, 0.0)
    e1 = float(np.max(np.abs(eta - 1)))
    eta_d = downlink_power_control(st.Delta, st.Q, 0.0)
    s = np.sum(eta_d * np.real(np.trace(st.Q, axis1=-2, axis2=-1)), axis=1)
    e2 = float(np.max(np.abs(s - 1)))
    return [Check("alpha_u=0 gives unit eta (max dev)", e1, 1e-12, e1 <= 1e-12),
            Check("downlink power identity (max dev)", e2, 1e-10, e2 <= 1e-10)]


def validate(cfg, n_blocks=20000, n_se_blocks=40000, seed=0, fault=None, grad_points=3):
    """Full oracle suite on one topology; returns the list of checks."""
    scn = build_topology(cfg)
    coeffs = equal_coefficients(scn.L)
    checks = [check_covariance(scn, coeffs, n_blocks, seed),
              check_nmse(scn, coeffs, n_blocks, seed, fault),
              check_gradient(scn, grad_points, seed)]
    checks += check_links(scn, coeffs, n_se_blocks, seed)
    checks += check_power(scn, coeffs)
    return checks
