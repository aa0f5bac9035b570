"""Exact fourth-order moments behind the closed-form SE expressions.

Conditioned on everything on the surface side, each AP sees jointly Gaussian
vectors (direct channels, noise, the scattered part of g_ap), so
Isserlis' theorem applies.  What is left are moments of vectors of the form
Tb_w z with z either Gaussian (EMI) or a random-phase LOS plus Gaussian
(user links); those are averaged over the phase errors exactly with
:func:`starcf.phase.expect`.
"""

import numpy as np

from .phase import expect, average_sandwich, _einsum
from .scenario import SIDES


class Source:
    """Independent zero-mean surface-side vector z' = Theta z."""

    def __init__(self, side, S, mu=None):
        self.side = side
        self.S = S          # E{z' z'^H}
        self.mu = mu        # LOS part with uniformly random phase (None if Gaussian)
        self._avg = None

    def avg(self, a):
        if self._avg is None:
            self._avg = average_sandwich(self.S, a)
        return self._avg


def _b(X):
    X = np.asarray(X)
    return X[None] if X.ndim == 2 else X


class MomentEngine:
    """Moments of ghat_mk^H g for a fixed scenario, coefficient set and statistics."""

    def __init__(self, scn, stats, coeffs):
        self.scn, self.st, self.co = scn, stats, coeffs
        self.a = scn.config.a
        self.s = np.sqrt(scn.config.tau_p * scn.powers[0])
        Rs = scn.R_sris
        self.Rs = Rs
        self.src = {}
        for k, w in enumerate(scn.omega):
            d = coeffs.diag(w)
            mu = np.sqrt(scn.bar_beta_u[k]) * scn.g_bar_u[k]
            S = np.outer(mu, mu.conj()) + scn.tilde_beta_u[k] * Rs
            self.src[("u", k)] = Source(w, d[:, None] * S * d.conj()[None], d * mu)
        for w in SIDES:
            d = coeffs.diag(w)
            Sw = d[:, None] * Rs * d.conj()[None]
            self.src[("e", w)] = Source(w, Sw)          # unit-power data EMI
            s2 = scn.sigma2(w)
            if s2 > 0:
                for p in set(scn.pilot.tolist()):
                    self.src[("p", w, p)] = Source(w, s2 * Sw)
        # AP-side quantities
        G = scn.g_bar_ap
        Z = stats.Z
        self.Gbar = G
        self.Dw = (scn.bar_beta_ap[:, None, None, None]
                   * np.einsum("mil,mkij,mjq->mklq", G.conj(), Z.conj().swapaxes(-1, -2), G)
                   + scn.tilde_beta_ap[:, None, None, None]
                   * np.einsum("mij,mkji->mk", scn.R_ap, Z.conj().swapaxes(-1, -2))[..., None, None]
                   * Rs)

    # ---------------------------------------------------------- vectors
    def h_vec(self, k):
        scn = self.scn
        v = [(self.s, ("u", j)) for j in scn.pilot_set(k)]
        for w in SIDES:
            key = ("p", w, int(scn.pilot[k]))
            if key in self.src:
                v.append((1.0, key))
        return v

    @staticmethod
    def x_vec(key):
        return [(1.0, key)]

    # ---------------------------------------------------------- primitives
    def E1(self, u, X, v):
        """E{u^H X v}; X (B, L, L) -> (B,)."""
        X = _b(X)
        out = np.zeros(X.shape[0], dtype=complex)
        for cu, ku in u:
            for cv, kv in v:
                if ku == kv:
                    out += np.conj(cu) * cv * np.einsum("bji,ij->b", X, self.src[ku].avg(self.a))
        return out

    def E2(self, a_, X, b_, c_, Y, d_, paired=False):
        """E{(a^H X b)(c^H Y d)}.

        X (Bx, L, L), Y (By, L, L) -> (Bx, By); with ``paired`` X and Y share the batch
        axis and the result is (B,).
        """
        X, Y = _b(X), _b(Y)
        pa, pb, kt = {}, {}, {}
        for ca, ka in a_:
            for cb, kb in b_:
                for cc, kc in c_:
                    for cd, kd in d_:
                        w = np.conj(ca) * cb * np.conj(cc) * cd
                        if ka == kb and kc == kd:
                            pa[(ka, kc)] = pa.get((ka, kc), 0) + w
                        if ka == kd and kb == kc:
                            pb[(ka, kb)] = pb.get((ka, kb), 0) + w
                        if ka == kb == kc == kd and self.src[ka].mu is not None:
                            kt[ka] = kt.get(ka, 0) + w
        n = "m" if paired else "n"
        shape = (X.shape[0],) if paired else (X.shape[0], Y.shape[0])
        out = np.zeros(shape, dtype=complex)
        for (p, r), w in pa.items():
            out += w * self._tt(X, p, Y, r, n)
        for (p, q), w in pb.items():
            out += w * self._sw(X, q, Y, p, n)
        for p, w in kt.items():
            out -= w * self._kurt(X, Y, p, n)
        return out

    def _tt(self, X, p, Y, r, n="n"):
        """E{tr(X Tb Sp Tb^H) tr(Y Tb Sr Tb^H)}."""
        sp, sr = self.src[p], self.src[r]
        if sp.side != sr.side:
            x = np.einsum("bji,ij->b", X, sp.avg(self.a))
            y = np.einsum("bji,ij->b", Y, sr.avg(self.a))
            return x * y if n == "m" else np.outer(x, y)
        s = sp.side
        ph = {"i": (1, s), "j": (-1, s), "k": (1, s), "l": (-1, s)}
        return expect(f"mji,ij,{n}lk,kl->m{n}".replace("mm", "m"), [X, sp.S, Y, sr.S], ph,
                      self.a)

    def _sw(self, X, q, Y, p, n="n"):
        """E{tr(X Tb Sq Tb^H Y Tb Sp Tb^H)}."""
        sq, sp = self.src[q], self.src[p]
        sub = f"mli,ij,{n}jk,kl->m{n}".replace("mm", "m")
        if sq.side != sp.side:
            return _einsum(sub, X, sq.avg(self.a), Y, sp.avg(self.a))
        s = sq.side
        ph = {"i": (1, s), "j": (-1, s), "k": (1, s), "l": (-1, s)}
        return expect(sub, [X, sq.S, Y, sp.S], ph, self.a)

    def _kurt(self, X, Y, p, n="n"):
        """E{(mu^H Tb^H X Tb mu)(mu^H Tb^H Y Tb mu)}."""
        src = self.src[p]
        mu = src.mu
        s = src.side
        ph = {"i": (-1, s), "j": (1, s), "k": (-1, s), "l": (1, s)}
        return expect(f"i,mij,j,k,{n}kl,l->m{n}".replace("mm", "m"),
                      [mu.conj(), X, mu, mu.conj(), Y, mu], ph, self.a)

    # ---------------------------------------------------------- AP level
    def _same_ap(self, W, h, Cq, x, Cd, Cvu_d, aps=None):
        """E{|u_m^H W_m v_m|^2} per AP with u = q + G_m h, v = d + G_m x.

        W, Cq, Cd, Cvu_d are (B, N, N) stacks for the APs listed in ``aps``.
        """
        scn = self.scn
        aps = np.arange(scn.M) if aps is None else np.asarray(aps)
        bb = scn.bar_beta_ap[aps][:, None, None]
        bt = scn.tilde_beta_ap[aps]
        G, Rap, Rs = self.Gbar[aps], scn.R_ap[aps], self.Rs
        GH = G.conj().swapaxes(-1, -2)
        WH = W.conj().swapaxes(-1, -2)
        tr = lambda A: np.trace(A, axis1=-2, axis2=-1)
        Dw = bb * GH @ W @ G + (bt * tr(W @ Rap))[:, None, None] * Rs
        c = tr(W @ Cvu_d)
        e = self.E1(h, Dw, x)
        A = (np.abs(c) ** 2 + 2 * np.real(np.conj(c) * e)
             + self.E2(h, Dw, x, x, Dw.conj().swapaxes(-1, -2), h, paired=True))
        Rs_b = np.broadcast_to(Rs, W.shape[:1] + Rs.shape)
        B = (bb[:, 0, 0] * self.E1(h, GH @ W @ Cd @ WH @ G, h)
             + bb[:, 0, 0] * bt * self.E2(x, Rs_b, x, h, GH @ W @ Rap @ WH @ G, h, paired=True))
        C = (bb[:, 0, 0] * self.E1(x, GH @ WH @ Cq @ W @ G, x)
             + bb[:, 0, 0] * bt * self.E2(h, Rs_b, h, x, GH @ WH @ Rap @ W @ G, x, paired=True))
        hRh = self.E1(h, Rs, h)[0]
        xRx = self.E1(x, Rs, x)[0]
        hx = self.E2(h, Rs, h, x, Rs, x)[0, 0]
        D = (tr(W @ Cd @ WH @ Cq) + bt * hRh * tr(W @ Cd @ WH @ Rap)
             + bt * xRx * tr(W @ Rap @ WH @ Cq) + bt ** 2 * hx * tr(W @ Rap @ WH @ Rap))
        return np.real(A + B + C + D)

    def pilot_cov(self, m, k):
        """Covariance of the direct-plus-noise part of the projected pilot signal."""
        scn = self.scn
        P = scn.pilot_set(k)
        return self.s ** 2 * self.st.Delta_d[m, P].sum(0) + scn.noise * np.eye(scn.N)

    def combining_moment(self, k, key):
        """M x M matrix E{(ghat_mk^H g_m)(ghat_nk^H g_n)^*}.

        key = ("u", k') for the channel of user k', ("e", w) for the unit-power
        data EMI re-radiated from side w.
        """
        scn = self.scn
        M, N = scn.M, scn.N
        h = self.h_vec(k)
        x = self.x_vec(key)
        if key[0] == "u":
            kp = key[1]
            Cd = self.st.Delta_d[:, kp]
            cop = scn.pilot[kp] == scn.pilot[k]
        else:
            Cd = np.zeros((M, N, N), dtype=complex)
            cop = False
        Z = self.st.Z[:, k]
        Dw = self.Dw[:, k]
        c = (self.s * np.einsum("mji,mji->m", Z.conj(), Cd) if cop
             else np.zeros(M, dtype=complex))     # s tr(Z^H Cd)
        e = self.E1(h, Dw, x)
        out = (np.outer(c, c.conj()) + c[:, None] * e.conj()[None, :]
               + c.conj()[None, :] * e[:, None]
               + self.E2(h, Dw, x, x, Dw.conj().swapaxes(-1, -2), h))
        W = Z.conj().swapaxes(-1, -2)
        Cvu = self.s * Cd if cop else np.zeros_like(Cd)
        Cq = np.array([self.pilot_cov(m, k) for m in range(M)])
        idx = np.arange(M)
        out[idx, idx] = self._same_ap(W, h, Cq, x, Cd, Cvu)
        return 0.5 * (out + out.conj().T)

    def trace_quadratic(self, m, W, k1, k2):
        """E{|g_{m k2}^H W g_{m k1}|^2} for an arbitrary N x N weight W."""
        Cq = self.st.Delta_d[m, k2]
        Cd = self.st.Delta_d[m, k1]
        Cvu = Cd if k1 == k2 else np.zeros_like(Cd)
        return float(self._same_ap(W[None], [(1.0, ("u", k2))], Cq[None], [(1.0, ("u", k1))],
                                   Cd[None], Cvu[None], aps=[m])[0])
