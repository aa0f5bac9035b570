"""Closed-form uplink (MR + LSFD) and downlink (conjugate) SINR, power control, baselines."""

from dataclasses import dataclass, field

import numpy as np

from .moments import MomentEngine
from .phase import expect, average_sandwich
from .scenario import SIDES, StarRisCoefficients, equal_coefficients
from .statistics import compute_statistics


def prefactor(cfg):
    return (cfg.tau_c - cfg.tau_p) / cfg.tau_c


# ---------------------------------------------------------------- power control

def uplink_power_control(Delta, alpha_u):
    """eta_k = (min_k' sum_m tr Delta_mk' / sum_m tr Delta_mk)^alpha_u."""
    tr = np.real(np.trace(Delta, axis1=-2, axis2=-1)).sum(0)
    if np.any(tr <= 0):
        raise ValueError("channel traces must be positive")
    return (tr.min() / tr) ** alpha_u


def downlink_power_control(Delta, Q, alpha_d, power=None):
    """eta_mk from the fractional rule; ``power`` (M, K) replaces tr(Q_mk) as E||f_mk||^2."""
    trD = np.real(np.trace(Delta, axis1=-2, axis2=-1)).sum(0)          # (K,)
    P = np.real(np.trace(Q, axis1=-2, axis2=-1)) if power is None else np.asarray(power)
    if np.any(trD <= 0) or np.any(P <= 0):
        raise ValueError("traces must be positive")
    w = trD ** (-alpha_d)                                               # (K,)
    return 1.0 / (P @ w)[:, None] * w[None, :]


# ---------------------------------------------------------------- moments

@dataclass
class MomentTable:
    """All second moments needed by both closed forms.

    moments[k, k'] is the M x M matrix E{(ghat_mk^H g_mk')(ghat_nk^H g_nk')^*}: first index is
    the combining/precoding user, second the channel user.
    """
    b: np.ndarray          # (K, M) tr(Q_mk)
    moments: np.ndarray    # (K, K, M, M)
    Gamma: dict            # side -> (K, M, M), unit EMI power
    pilot: np.ndarray

    def cu(self, comb_user, chan_user):
        """Single accessor for the (combining-user, channel-user) convention."""
        return self.moments[comb_user, chan_user]


def moment_table(scn, stats, coeffs):
    eng = MomentEngine(scn, stats, coeffs)
    K, M = scn.K, scn.M
    mom = np.empty((K, K, M, M), dtype=complex)
    gam = {w: np.empty((K, M, M), dtype=complex) for w in SIDES}
    for k in range(K):
        for kp in range(K):
            mom[k, kp] = eng.combining_moment(k, ("u", kp))
        for w in SIDES:
            gam[w][k] = eng.combining_moment(k, ("e", w))
    b = np.real(np.trace(stats.Q, axis1=-2, axis2=-1)).T
    return MomentTable(b, mom, gam, np.asarray(scn.pilot))


# ---------------------------------------------------------------- uplink

@dataclass
class UplinkClosedForm:
    b: np.ndarray           # (K, M)
    table: MomentTable
    Gamma_t: np.ndarray     # (K, M, M)
    Gamma_r: np.ndarray
    Lambda: np.ndarray      # (K, M, M)
    eta: np.ndarray         # (K,)
    p_u: float
    sigma_t2: float
    sigma_r2: float
    noise: float
    pref: float
    a: np.ndarray = field(default=None)

    @property
    def K(self):
        return self.b.shape[0]

    def copilot(self, k):
        return [j for j in range(self.K) if self.table.pilot[j] == self.table.pilot[k]]

    def Omega(self, k, kp):
        """Moment matrix for a co-pilot interferer (zero otherwise)."""
        M = self.table.cu(k, kp)
        return M if kp in self.copilot(k) else np.zeros_like(M)

    def Upsilon(self, k, kp):
        """Moment matrix for an interferer on another pilot (zero otherwise)."""
        M = self.table.cu(k, kp)
        return np.zeros_like(M) if kp in self.copilot(k) else M

    def denominator(self, k):
        """a^H B a is the total received power after LSFD (signal included)."""
        B = np.einsum("j,jmq->mq", self.p_u * self.eta, self.table.moments[k])
        B = B + self.sigma_t2 * self.Gamma_t[k] + self.sigma_r2 * self.Gamma_r[k]
        return B + self.noise * self.Lambda[k]

    def sinr(self, k, a=None):
        a = self.a[k] if a is None else np.asarray(a)
        t = self.terms(k, a)
        return t["DS"] / (t["copilot"] + t["general"] + t["EMI_t"] + t["EMI_r"] + t["noise"])

    def terms(self, k, a=None):
        a = self.a[k] if a is None else np.asarray(a)
        q = lambda X: float(np.real(a.conj() @ X @ a))
        pe = self.p_u * self.eta
        ds = pe[k] * abs(a.conj() @ self.b[k]) ** 2
        cp = self.copilot(k)
        copilot = sum(pe[j] * q(self.table.cu(k, j)) for j in cp if j != k)
        general = (sum(pe[j] * q(self.table.cu(k, j)) for j in range(self.K) if j not in cp)
                   + pe[k] * q(self.table.cu(k, k)) - ds)
        return {"DS": ds, "copilot": copilot, "general": general,
                "EMI_t": self.sigma_t2 * q(self.Gamma_t[k]),
                "EMI_r": self.sigma_r2 * q(self.Gamma_r[k]),
                "noise": self.noise * q(self.Lambda[k])}

    def se(self, k, a=None):
        return self.pref * np.log2(1 + self.sinr(k, a))


def lsfd_weights(cf, k):
    B = cf.denominator(k)
    a = np.linalg.solve(B, cf.b[k])
    if not np.all(np.isfinite(a)):
        raise np.linalg.LinAlgError("LSFD denominator is singular")
    return a


def uplink_closed_form(scn, stats, coeffs, eta=None, table=None):
    if table is None:
        table = moment_table(scn, stats, coeffs)
    if eta is None:
        eta = uplink_power_control(stats.Delta, scn.config.alpha_u)
    b = table.b
    cf = UplinkClosedForm(b, table, table.Gamma["t"], table.Gamma["r"],
                          np.array([np.diag(x) for x in b]).astype(complex), np.asarray(eta),
                          scn.powers[1], scn.sigma_t2, scn.sigma_r2, scn.noise,
                          prefactor(scn.config))
    cf.a = np.array([lsfd_weights(cf, k) for k in range(scn.K)])
    return cf


def uplink_se(cf, k):
    return cf.se(k)


# ---------------------------------------------------------------- downlink

def downlink_emi(scn, stats):
    """E|(Tb Theta g_u,k)^T n_r|^2 per user (sigma_r^2 tr(R_SRIS X_k))."""
    tr = np.real(np.einsum("ij,kji->k", scn.R_sris, stats.X))
    return scn.sigma_r2 * tr


@dataclass
class DownlinkClosedForm:
    ds: np.ndarray          # (K,) sum_m sqrt(eta_mk) tr(Q_mk)
    interference: np.ndarray  # (K, K) E|sum_m sqrt(eta_mk') g_mk^T f_mk'|^2, [channel, precoder]
    emi: np.ndarray         # (K,)
    eta: np.ndarray         # (M, K)
    p_d: float
    noise: float
    pref: float
    pilot: np.ndarray

    def terms(self, k):
        cp = [j for j in range(len(self.ds)) if self.pilot[j] == self.pilot[k]]
        ds = self.p_d * self.ds[k] ** 2
        I = self.p_d * self.interference[k]
        return {"DS": ds, "copilot": float(sum(I[j] for j in cp if j != k)),
                "general": float(sum(I[j] for j in range(len(I)) if j not in cp) + I[k] - ds),
                "EMI_t": 0.0, "EMI_r": float(self.emi[k]), "noise": self.noise}

    def sinr(self, k):
        t = self.terms(k)
        return t["DS"] / (t["copilot"] + t["general"] + t["EMI_r"] + t["noise"])

    def se(self, k):
        return self.pref * np.log2(1 + self.sinr(k))


def downlink_closed_form(scn, stats, coeffs, eta_d=None, table=None):
    if table is None:
        table = moment_table(scn, stats, coeffs)
    if eta_d is None:
        eta_d = downlink_power_control(stats.Delta, stats.Q, scn.config.alpha_d)
    c = np.sqrt(eta_d)                                        # (M, K)
    K = scn.K
    ds = np.einsum("mk,km->k", c, table.b)
    I = np.empty((K, K))
    for k in range(K):
        for kp in range(K):
            I[k, kp] = np.real(c[:, kp] @ table.cu(kp, k) @ c[:, kp])
    return DownlinkClosedForm(ds, I, downlink_emi(scn, stats), eta_d, scn.powers[2],
                              scn.noise, prefactor(scn.config), np.asarray(scn.pilot))


# ---------------------------------------------------------------- report

@dataclass
class SeReport:
    omega: list
    uplink_terms: list
    downlink_terms: list
    se_u: np.ndarray
    se_d: np.ndarray
    lsfd: np.ndarray
    eta_u: np.ndarray
    eta_d: np.ndarray

    @property
    def sinr_u(self):
        return np.array([_sinr(t) for t in self.uplink_terms])

    @property
    def sinr_d(self):
        return np.array([_sinr(t) for t in self.downlink_terms])

    @property
    def se_sum(self):
        return 0.5 * float(np.sum(self.se_u + self.se_d))

    def rows(self):
        cols = ("DS", "copilot", "general", "EMI_t", "EMI_r", "noise")
        out = []
        for link, terms, se in (("uplink", self.uplink_terms, self.se_u),
                                ("downlink", self.downlink_terms, self.se_d)):
            for k, t in enumerate(terms):
                out.append([k, self.omega[k], link] + [t[c] for c in cols] + [se[k]])
        return out


def _sinr(t):
    return t["DS"] / (t["copilot"] + t["general"] + t["EMI_t"] + t["EMI_r"] + t["noise"])


def evaluate(scn, coeffs, stats=None):
    """Closed-form uplink and downlink evaluation sharing one moment table."""
    if stats is None:
        stats = compute_statistics(scn, coeffs)
    table = moment_table(scn, stats, coeffs)
    up = uplink_closed_form(scn, stats, coeffs, table=table)
    dn = downlink_closed_form(scn, stats, coeffs, table=table)
    K = scn.K
    return SeReport(list(scn.omega), [up.terms(k) for k in range(K)],
                    [dn.terms(k) for k in range(K)],
                    np.array([up.se(k) for k in range(K)]),
                    np.array([dn.se(k) for k in range(K)]), up.a, up.eta, dn.eta)


# ---------------------------------------------------------------- helper matrices

def _sandwich_exact(Xp, B, Yp, same, a):
    """E{Tb X' Tb^H B Tb' Y' Tb'^H}; Tb' = Tb when ``same``, independent otherwise."""
    if not same:
        return average_sandwich(Xp, a) @ B @ average_sandwich(Yp, a)
    I = np.eye(Xp.shape[-1])
    ph = {"i": (1, 0), "j": (-1, 0), "k": (1, 0), "l": (-1, 0)}
    return expect("pi,ij,jk,kl,lq->pq", [I, Xp, B, Yp, I], ph, a)


def _sandwich_product(Xp, B, Yp, same, a):
    """Product-of-averages form with the diagonal replaced by its exact value."""
    P = average_sandwich(Xp, a) @ B @ average_sandwich(Yp, a)
    if same:
        d = np.diag(Xp @ average_sandwich(B, a) @ Yp)
        P = P - np.diag(np.diag(P)) + np.diag(d)
    return P


def _user_cov(scn, k):
    return (scn.bar_beta_u[k] * np.outer(scn.g_bar_u[k], scn.g_bar_u[k].conj())
            + scn.tilde_beta_u[k] * scn.R_sris)


def _resolve(scn, coeffs, key):
    """(side, Theta X Theta^H) for a user index or a side name (EMI)."""
    if isinstance(key, str):
        side, X = key, scn.R_sris
    else:
        side, X = scn.omega[key], _user_cov(scn, key)
    d = coeffs.diag(side)
    return side, d[:, None] * X * d.conj()[None]


def helper_f_matrices(k, kp, coeffs, scn, a=None, method="exact"):
    """E{Theta Tb Delta_u Tb^H Theta^H R_SRIS Theta' Tb' Delta_u' Tb'^H Theta'^H}.

    ``k`` and ``kp`` are user indices or side names ('t'/'r'), the latter standing for
    R_SRIS on that side (the F_bar and F_hat variants). ``method="product"`` gives the cheaper
    product-of-averages form, exact only on the diagonal or across sides.
    """
    a = scn.config.a if a is None else a
    s1, X = _resolve(scn, coeffs, k)
    s2, Y = _resolve(scn, coeffs, kp)
    f = _sandwich_exact if method == "exact" else _sandwich_product
    return f(X, scn.R_sris, Y, s1 == s2, a)


def delta_ap(scn, stats, m, k):
    Z = stats.Z[m, k]
    G = scn.g_bar_ap[m]
    varpi = G.conj().T @ Z.conj().T @ G
    return (scn.bar_beta_ap[m] * varpi
            + scn.tilde_beta_ap[m] * np.trace(scn.R_ap[m] @ Z.conj().T) * scn.R_sris)


def helper_k_matrices(m, k, kp, kpp, coeffs, scn, stats, a=None, method="exact"):
    """Same as :func:`helper_f_matrices` with Delta_ap,mk^H in the middle."""
    a = scn.config.a if a is None else a
    s1, X = _resolve(scn, coeffs, kp)
    s2, Y = _resolve(scn, coeffs, kpp)
    f = _sandwich_exact if method == "exact" else _sandwich_product
    return f(X, delta_ap(scn, stats, m, k).conj().T, Y, s1 == s2, a)


def trace_quadratics(scn, stats, coeffs, m, k, k1, k2):
    """Phase average of tr(C_k2 Z_mk^H C_k1 Z_mk), C the covariance given the phase errors.

    k1, k2 are user indices or side names; a side stands for the unit-power EMI re-radiated
    from that side (no direct path).
    """
    eng = MomentEngine(scn, stats, coeffs)
    Z = stats.Z[m, k]
    ZH = Z.conj().T
    G = scn.g_bar_ap[m]
    Rap = scn.R_ap[m]
    bb, bt = scn.bar_beta_ap[m], scn.tilde_beta_ap[m]
    Rs = scn.R_sris
    srcs, Dd = [], []
    for key in (k1, k2):
        if isinstance(key, str):
            srcs.append(("e", key))
            Dd.append(np.zeros((scn.N, scn.N)))
        else:
            srcs.append(("u", key))
            Dd.append(stats.Delta_d[m, key])
    (p1, p2), (D1, D2) = srcs, Dd
    vp = G.conj().T @ ZH @ G
    E1 = lambda X, p: eng.E1([(1, p)], X, [(1, p)])[0]
    out = np.trace(D2 @ ZH @ D1 @ Z)
    out += bt * E1(Rs, p1) * np.trace(D2 @ ZH @ Rap @ Z)
    out += bt * E1(Rs, p2) * np.trace(Rap @ ZH @ D1 @ Z)
    out += bb * E1(G.conj().T @ Z @ D2 @ ZH @ G, p1)
    out += bb * E1(G.conj().T @ ZH @ D1 @ Z @ G, p2)
    out += bt ** 2 * eng._tt(Rs[None], p2, Rs[None], p1)[0, 0] * np.trace(Rap @ ZH @ Rap @ Z)
    out += bt * bb * eng._tt(Rs[None], p2, (G.conj().T @ Z @ Rap @ ZH @ G)[None], p1)[0, 0]
    out += bt * bb * eng._tt(Rs[None], p1, (G.conj().T @ ZH @ Rap @ Z @ G)[None], p2)[0, 0]
    out += bb ** 2 * eng._sw(vp[None], p1, vp.conj().T[None], p2)[0, 0]
    return complex(out)


# ---------------------------------------------------------------- baselines

def cris_coefficients(L):
    """Two co-located conventional surfaces of L/2 elements: one reflects, one transmits."""
    if L % 2:
        raise ValueError("cRIS split needs an even number of elements")
    eq = equal_coefficients(L)
    half = np.arange(L) < L // 2
    return StarRisCoefficients(eq.theta_t, eq.theta_r, (~half).astype(float),
                               half.astype(float))


def baselines(scn, variant):
    """(scenario, coefficients) pair for a baseline variant."""
    L = scn.L
    if variant == "equal":
        return scn, equal_coefficients(L)
    if variant == "error_free":
        cfg = scn.config.replace(a=0.0, rho_db=float("inf"))
        return scn.replace(config=cfg, sigma_r2=0.0, sigma_t2=0.0), equal_coefficients(L)
    if variant == "ris_free":
        cfg = scn.config.replace(ris_free=True)
        return (scn.replace(config=cfg, beta_u=np.zeros_like(scn.beta_u), sigma_r2=0.0,
                            sigma_t2=0.0), equal_coefficients(L))
    if variant == "cris":
        return scn, cris_coefficients(L)
    raise ValueError(f"unknown baseline {variant!r}")
