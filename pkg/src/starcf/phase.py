"""Averaging over uniform phase errors.

Every element of a surface carries an independent phase error drawn
uniformly on [-a, a].  Expectations of products of e^{+-j phase} terms only
depend on which indices coincide, so a contraction over element indices can
be averaged exactly by splitting it into a small number of "index-merged"
contractions (Moebius inversion on the partition lattice).
"""

from functools import lru_cache
from itertools import product

import numpy as np


def characteristic(a, c=1):
    """E{exp(j c x)} for x ~ U[-a, a]."""
    if c == 0:
        return 1.0
    x = c * float(a)
    return 1.0 if x == 0.0 else float(np.sin(x) / x)


def phase_characteristic(a):
    return characteristic(a, 1)


def average_sandwich(X, a):
    """E{Tb X Tb^H} with Tb = diag(exp(j x)): phi^2 X + (1 - phi^2) diag(X)."""
    phi2 = characteristic(a) ** 2
    X = np.asarray(X)
    out = phi2 * X
    idx = np.arange(X.shape[-1])
    out[..., idx, idx] = X[..., idx, idx]
    return out


def _set_partitions(items):
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def _finer(p, q):
    """True if every block of p sits inside a block of q."""
    return all(any(set(b) <= set(c) for c in q) for b in p)


@lru_cache(maxsize=None)
def _moebius_table(signs, a):
    """[(partition, lam)] with sum_pi lam_pi * 1[indices equal within pi] = weight."""
    letters = range(len(signs))
    parts = [tuple(tuple(sorted(b)) for b in p) for p in _set_partitions(letters)]
    parts.sort(key=lambda p: -len(p))
    lam = {}
    for p in parts:
        val = 1.0
        for b in p:
            val *= characteristic(a, abs(sum(signs[i] for i in b)))
        lam[p] = val - sum(lam[q] for q in lam if q != p and _finer(q, p))
    return [(p, v) for p, v in lam.items() if abs(v) > 1e-15]


_PLANS = {}


def _plan(subscripts, shapes):
    """Pairwise contraction schedule [(i, j, 'ab,cd->ef')] from numpy's greedy path."""
    lhs, out = subscripts.split("->")
    subs = lhs.split(",")
    dummies = [np.empty(s, dtype=np.int8) for s in shapes]
    path = np.einsum_path(subscripts, *dummies, optimize="greedy")[0][1:]
    steps = []
    for pair in path:
        pair = tuple(sorted(pair, reverse=True))
        taken = [subs.pop(i) for i in pair]
        keep = set("".join(subs)) | set(out)
        seen = []
        for c in "".join(taken):
            if c in keep and c not in seen:
                seen.append(c)
        res = "".join(seen) if subs else out
        steps.append((pair, ",".join(taken) + "->" + res))
        subs.append(res)
    return steps


def _einsum(subscripts, *ops):
    key = (subscripts, tuple(o.shape for o in ops))
    steps = _PLANS.get(key)
    if steps is None:
        steps = _PLANS[key] = _plan(subscripts, key[1])
    ops = list(ops)
    for pair, sub in steps:
        taken = [ops.pop(i) for i in pair]
        ops.append(np.einsum(sub, *taken))
    return ops[0]


def expect(subscripts, operands, phases, a):
    """Average an einsum contraction over phase errors.

    ``phases`` maps index letters to (sign, side).  Letter ``i`` with sign +1
    contributes exp(+j x_i), sign -1 contributes exp(-j x_i); letters on
    different sides see independent draws.  All phase letters must be summed
    (absent from the output).
    """
    by_side = {}
    for ch, (sgn, side) in phases.items():
        by_side.setdefault(side, []).append((ch, sgn))
    tables = []
    for side, lst in by_side.items():
        chars = [c for c, _ in lst]
        signs = tuple(s for _, s in lst)
        tables.append([(p, lam, chars) for p, lam in _moebius_table(signs, float(a))])
    lhs, rhs = subscripts.split("->")
    total = 0.0
    for combo in product(*tables):
        weight = 1.0
        sub = {}
        for p, lam, chars in combo:
            weight *= lam
            for block in p:
                for i in block:
                    sub[chars[i]] = chars[block[0]]
        merged = "".join(sub.get(c, c) for c in lhs)
        total = total + weight * _einsum(merged + "->" + rhs, *operands)
    return total
