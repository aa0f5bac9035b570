"""Command line entry point: ``python -m starcf {sweep,validate,optimize,se}``."""

import argparse
import csv
import json
import sys
from dataclasses import fields

from .harness import (ConfigError, ExperimentSpec, fmt, load_coefficients, load_config,
                      optimize, run_sweep, validate)
from .optimizer import GdSettings
from .scenario import SystemConfig, build_topology, equal_coefficients
from .spectral import evaluate

SE_COLUMNS = ("user", "side", "link", "DS", "copilot", "general", "EMI_t", "EMI_r", "noise",
              "SE")


def _overrides(pairs):
    """--set key=value (value parsed as JSON, falling back to the raw string)."""
    names = {f.name for f in fields(SystemConfig)}
    out = {}
    for p in pairs or []:
        k, sep, v = p.partition("=")
        if not sep:
            raise ConfigError(f"override {p!r} is not key=value")
        if k not in names:
            raise ConfigError(f"unknown config key {k!r}")
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"bad value list {text!r}") from e


def _gd_settings(args, protocol):
    try:
        return GdSettings(iter_max=args.iter_max, mu_init=args.mu, varrho=args.varrho,
                          epsilon=args.epsilon, protocol=protocol)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _parser():
    p = argparse.ArgumentParser(prog="starcf")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file whose keys mirror SystemConfig")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                        help="override one config field (repeatable)")
        sp.add_argument("--seed", type=int, help="topology seed (overrides the config)")

    def gd_opts(sp):
        sp.add_argument("--iter-max", type=int, default=200)
        sp.add_argument("--mu", type=float, default=30.0)
        sp.add_argument("--varrho", type=float, default=0.2)
        sp.add_argument("--epsilon", type=float, default=1e-4)

    sw = sub.add_parser("sweep", help="parameter sweep averaged over topologies")
    common(sw)
    gd_opts(sw)
    sw.add_argument("--axis", required=True)
    sw.add_argument("--values", required=True, help="comma separated, sorted")
    sw.add_argument("--variant", action="append", dest="variants",
                    help="repeatable; name or name@key=val,key=val for per-variant overrides")
    sw.add_argument("--metrics", default="se_sum")
    sw.add_argument("--topologies", type=int, default=10)
    sw.add_argument("--mc-blocks", type=int, default=0)
    sw.add_argument("--workers", type=int)
    sw.add_argument("-o", "--output", required=True)

    va = sub.add_parser("validate", help="closed forms and gradients against their oracles")
    common(va)
    va.add_argument("--blocks", type=int, default=20000)
    va.add_argument("--se-blocks", type=int, default=40000)
    va.add_argument("--grad-points", type=int, default=3)
    va.add_argument("--fault", choices=["Q2"], help="inject a known error (self-test)")
    va.add_argument("-o", "--output", help="also write the report to this file")

    op = sub.add_parser("optimize", help="projected GD on the surface coefficients")
    common(op)
    gd_opts(op)
    op.add_argument("--coeffs", required=True, help="output JSON")
    op.add_argument("--trace", required=True, help="output CSV")

    se = sub.add_parser("se", help="per-user closed-form SE at one point")
    common(se)
    se.add_argument("--coeffs", help="coefficient JSON (default: equal matrix)")
    se.add_argument("-o", "--output", help="CSV path (default: stdout)")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        over = _overrides(args.set)
        if args.seed is not None:
            over["seed"] = args.seed
        cfg = load_config(args.config, over)
        return _dispatch(args, cfg)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


def _dispatch(args, cfg):
    if args.cmd == "sweep":
        spec = ExperimentSpec(cfg, args.axis, _floats(args.values), args.variants or ["equal"],
                              [m for m in args.metrics.split(",") if m], args.topologies,
                              args.mc_blocks, args.output, _gd_settings(args, cfg.protocol))
        rows = run_sweep(spec, args.workers)
        print(f"wrote {len(rows)} rows to {args.output} (seed {cfg.seed})")
        return 0

    if args.cmd == "validate":
        checks = validate(cfg, args.blocks, args.se_blocks, cfg.seed, args.fault,
                          args.grad_points)
        lines = [f"seed {cfg.seed}"] + [c.line() for c in checks]
        ok = all(c.passed for c in checks)
        lines.append("ALL PASS" if ok else "VALIDATION FAILED")
        text = "\n".join(lines)
        print(text)
        if args.output:
            with open(args.output, "w") as fh:
                fh.write(text + "\n")
        return 0 if ok else 1

    if args.cmd == "optimize":
        st = optimize(cfg, _gd_settings(args, cfg.protocol), args.coeffs, args.trace)
        print(f"seed {cfg.seed}: NMSE {fmt(st.f_init)} -> {fmt(st.f)} after {st.iter} iterations")
        return 0

    if args.cmd == "se":
        scn = build_topology(cfg)
        coeffs = load_coefficients(args.coeffs) if args.coeffs else equal_coefficients(scn.L)
        if coeffs.theta_t.size != scn.L:
            raise ConfigError("coefficient file does not match L")
        rep = evaluate(scn, coeffs)
        fh = open(args.output, "w", newline="") if args.output else sys.stdout
        try:
            w = csv.writer(fh)
            w.writerow(SE_COLUMNS)
            for r in rep.rows():
                w.writerow([fmt(x) for x in r])
        finally:
            if args.output:
                fh.close()
        print(f"seed {cfg.seed}: SE_sum {fmt(rep.se_sum)}", file=sys.stderr)
        return 0
    raise AssertionError(args.cmd)


if __name__ == "__main__":
    sys.exit(main())
