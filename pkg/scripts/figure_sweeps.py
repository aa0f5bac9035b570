"""Sweeps behind the figure shapes (NMSE vs p_p, SE vs M/N/K/L, impairments).

Writes one CSV per sweep into the output directory. Example:

    python scripts/figure_sweeps.py --out results --topologies 10
"""

import argparse
import os
import time

import numpy as np

from starcf.harness import ExperimentSpec, run_sweep
from starcf.optimizer import GdSettings
from starcf.scenario import SystemConfig

PI8, PI2 = np.pi / 8, np.pi / 2


def sweeps(base):
    imp = [f"equal@a={PI2}", "equal@rho_db=0"]
    return {
        "nmse_vs_pp": ("p_p", [-10, -5, 0, 5, 10, 15, 20, 25, 30],
                       ["equal", *imp, "gd", "error_free"], ["nmse"], base),
        "se_vs_m": ("M", [2, 4, 6, 8, 10, 12], ["equal", "gd", "ris_free"], ["se_sum"], base),
        "se_vs_n": ("N", [1, 2, 4, 6], ["equal", "gd", "ris_free"], ["se_sum"], base),
        "se_vs_k": ("K", [2, 4, 6, 8, 10], ["equal", "error_free"], ["se_avg"], base),
        "se_vs_l": ("L", [16, 32, 64, 128], ["error_free", "equal", "cris"], ["se_sum"], base),
        "se_vs_a": ("a", [0.0, PI8, np.pi / 4, 3 * np.pi / 8, PI2], ["equal", "gd"],
                    ["se_sum"], base),
        "se_vs_rho": ("rho_db", [0, 5, 10, 15, 20], ["equal", "gd"], ["se_sum"], base),
    }


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="results")
    p.add_argument("--topologies", type=int, default=10)
    p.add_argument("--only", nargs="*", help="subset of sweep names")
    p.add_argument("--iter-max", type=int, default=200)
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)
    base = SystemConfig(M=10, N=4, K=6, K_r=3, K_t=3)
    gd = GdSettings(iter_max=args.iter_max)
    for name, (axis, vals, variants, metrics, cfg) in sweeps(base).items():
        if args.only and name not in args.only:
            continue
        t = time.perf_counter()
        path = os.path.join(args.out, name + ".csv")
        spec = ExperimentSpec(cfg, axis, [float(v) for v in vals], variants, metrics,
                              args.topologies, output=path, gd=gd)
        rows = run_sweep(spec)
        print(f"{name}: {len(rows)} rows -> {path} ({time.perf_counter() - t:.0f} s)")


if __name__ == "__main__":
    main()
