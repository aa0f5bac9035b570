"""Scan the STAR-RIS hop gain: error-free vs RIS-free SE and the main trends per value.

    python scripts/hop_gain_scan.py 30 40 45 50 55 60
"""

import sys

import numpy as np

from starcf.scenario import SystemConfig, build_topology
from starcf.spectral import baselines, evaluate

SEEDS = range(10)
BASE = dict(M=10, N=4, K=6, K_r=3, K_t=3)


def mean_se(gain, variant="equal", **kw):
    out = []
    for s in SEEDS:
        scn = build_topology(SystemConfig(**{**BASE, **kw, "seed": s, "ris_hop_gain_db": gain}))
        scn, c = baselines(scn, variant)
        out.append(evaluate(scn, c).se_sum)
    return float(np.mean(out))


def main(gains):
    print("gain_db,error_free,ris_free,ratio,se_a_pi8,se_a_pi2")
    for g in gains:
        ef, rf = mean_se(g, "error_free"), mean_se(g, "ris_free")
        a8, a2 = mean_se(g, a=np.pi / 8), mean_se(g, a=np.pi / 2)
        print(f"{g:g},{ef:.4f},{rf:.4f},{ef / rf:.4f},{a8:.4f},{a2:.4f}")


if __name__ == "__main__":
    main([float(x) for x in sys.argv[1:]] or [30.0, 45.0, 60.0])
