"""Projected gradient descent on the STAR-RIS coefficients (NMSE objective).

Complex gradients follow the convention df/dtheta = (df/dx - j df/dy) / 2 with theta = x + jy,
so the steepest-descent direction for the real objective is -conj(df/dtheta).
"""

from dataclasses import dataclass, field

import numpy as np

from .scenario import SIDES, StarRisCoefficients, equal_coefficients, random_coefficients
from .statistics import compute_statistics, nmse_from


@dataclass
class GdSettings:
    iter_max: int = 200
    mu_init: float = 30.0
    varrho: float = 0.2
    epsilon: float = 1e-4
    protocol: str = "ES"
    init: str = "equal"         # or "random"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.varrho <= 1:
            raise ValueError("varrho must lie in [0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class GdState:
    coeffs: StarRisCoefficients
    mu_theta: float
    mu_u: float
    f: float
    iter: int
    trace: list = field(default_factory=list)   # rows (iter, f, mu_theta, mu_u)
    f_init: float = None


# ---------------------------------------------------------------- building blocks

def _x0(scn, stats, k):
    """bar_b_u A_bar_k + tilde_b_u R_bar (before the coefficient congruence)."""
    return scn.bar_beta_u[k] * stats.A_bar[k] + scn.tilde_beta_u[k] * stats.R_bar


def _ap_weight(scn, m, P=None):
    """bar_b_ap G^H P G + tilde_b_ap tr(R_ap P) R_SRIS (P = I gives the tr(Delta) weight)."""
    G = scn.g_bar_ap[m]
    if P is None:
        P = np.eye(scn.N)
    return (scn.bar_beta_ap[m] * G.conj().T @ P @ G
            + scn.tilde_beta_ap[m] * np.trace(scn.R_ap[m] @ P) * scn.R_sris)


def _w(X0, d, B):
    """diag(X0 Theta^H B) with Theta = diag(d)."""
    return np.einsum("ij,j,ji->i", X0, d.conj(), B)


def _split(coeffs, side, w):
    """(theta-gradient, u-gradient) of tr(Theta X0 Theta^H B) given w."""
    u, th = coeffs.u(side), coeffs.theta(side)
    return u * w, 2 * np.real(th * w)


# ---------------------------------------------------------------- per-(m, k) gradients

def grad_theta_delta(scn, stats, coeffs, m, k):
    w = _w(_x0(scn, stats, k), coeffs.diag(scn.omega[k]), _ap_weight(scn, m))
    return _split(coeffs, scn.omega[k], w)[0]


def grad_u_delta(scn, stats, coeffs, m, k):
    w = _w(_x0(scn, stats, k), coeffs.diag(scn.omega[k]), _ap_weight(scn, m))
    return _split(coeffs, scn.omega[k], w)[1]


def _pi(stats, m, k):
    Psi_inv = np.linalg.inv(stats.Psi[m, k])
    D = stats.Delta[m, k]
    return Psi_inv @ D + D @ Psi_inv, Psi_inv @ D @ D @ Psi_inv


def _w_q(scn, stats, coeffs, m, k, side, restrict):
    """d tr(Q_mk) / d Theta_side in the w form (before the u / theta split)."""
    s2 = scn.config.tau_p * scn.powers[0]
    d = coeffs.diag(side)
    Pi, Pib = _pi(stats, m, k)
    B1 = _ap_weight(scn, m, Pi)
    B2 = _ap_weight(scn, m, Pib)
    w = np.zeros(scn.L, dtype=complex)
    if scn.omega[k] == side:
        w += _w(_x0(scn, stats, k), d, B1)
    for j in scn.pilot_set(k):
        if scn.omega[j] == side:
            w -= s2 * _w(_x0(scn, stats, j), d, B2)
    if not restrict or scn.omega[k] == side:
        w -= scn.sigma2(side) * _w(stats.R_bar, d, B2)
    return s2 * w


def grad_theta_q(scn, stats, coeffs, m, k, side=None):
    """d tr(Q_mk)/d theta_side; side defaults to user k's own side."""
    side = scn.omega[k] if side is None else side
    return _split(coeffs, side, _w_q(scn, stats, coeffs, m, k, side, False))[0]


def grad_u_q(scn, stats, coeffs, m, k, side=None):
    side = scn.omega[k] if side is None else side
    return _split(coeffs, side, _w_q(scn, stats, coeffs, m, k, side, False))[1]


def grad_nmse(scn, stats, coeffs, restrict=False):
    """(d_theta [2L], d_u [2L]) stacked t then r.

    With ``restrict`` only users on side w contribute to the side-w gradient; the default
    keeps every (m, k) pair, which is what the objective actually depends on (Psi_mk
    couples both sides through the EMI and co-pilot users).
    """
    trD = np.real(np.trace(stats.Delta, axis1=-2, axis2=-1)).sum()
    trQ = np.real(np.trace(stats.Q, axis1=-2, axis2=-1)).sum()
    gt, gu = [], []
    for side in SIDES:
        d = coeffs.diag(side)
        wD = np.zeros(scn.L, dtype=complex)
        wQ = np.zeros(scn.L, dtype=complex)
        for m in range(scn.M):
            B = _ap_weight(scn, m)
            for k in range(scn.K):
                if scn.omega[k] == side:
                    wD += _w(_x0(scn, stats, k), d, B)
                if not restrict or scn.omega[k] == side:
                    wQ += _w_q(scn, stats, coeffs, m, k, side, restrict)
        w = (trQ * wD - trD * wQ) / trD ** 2
        a, b = _split(coeffs, side, w)
        gt.append(a)
        gu.append(b)
    return np.concatenate(gt), np.concatenate(gu)


# ---------------------------------------------------------------- projections

def project_theta(z):
    z = np.asarray(z, dtype=complex)
    r = np.abs(z)
    return np.where(r > 0, z / np.where(r > 0, r, 1), 1.0 + 0j)


def project_u_es(u):
    """Unit-norm (u_t, u_r) pairs; signs are dropped (see :func:`_absorb_sign`)."""
    u = np.abs(np.asarray(u, dtype=float))
    L = u.size // 2
    ut, ur = u[:L], u[L:]
    n = np.hypot(ut, ur)
    c = 1 / np.sqrt(2)
    ok = n > 0
    safe = np.where(ok, n, 1)
    return np.concatenate([np.where(ok, ut / safe, c), np.where(ok, ur / safe, c)])


def _absorb_sign(th, u):
    """u_l theta_l is all that enters Theta, so a negative amplitude becomes a phase flip."""
    return np.where(u < 0, -th, th), np.abs(u)


def project_u_ms(g):
    """One-hot per element pair; larger magnitude wins, ties go to reflection."""
    g = np.abs(np.asarray(g, dtype=float))
    L = g.size // 2
    t = (g[:L] > g[L:]).astype(float)
    return np.concatenate([t, 1 - t])


def _stack(coeffs):
    return (np.concatenate([coeffs.theta_t, coeffs.theta_r]),
            np.concatenate([coeffs.u_t, coeffs.u_r]))


def _unstack(th, u):
    L = th.size // 2
    return StarRisCoefficients(th[:L].copy(), th[L:].copy(), u[:L].copy(), u[L:].copy())


# ---------------------------------------------------------------- descent loop

def objective(scn, coeffs):
    st = compute_statistics(scn, coeffs)
    return nmse_from(st.Delta, st.Q), st


def initial_coefficients(scn, settings):
    if settings.init == "random":
        return random_coefficients(scn.L, np.random.default_rng(settings.seed), settings.protocol)
    c = equal_coefficients(scn.L)
    if settings.protocol == "MS":
        c.u_t, c.u_r = np.zeros(scn.L), np.ones(scn.L)
    return c


def run_gd(scn, settings=None, init=None, grad=grad_nmse):
    """Jacobi-style projected GD; a trial point is adopted only if it lowers the NMSE."""
    settings = settings or GdSettings()
    coeffs = init.copy() if init is not None else initial_coefficients(scn, settings)
    if not coeffs.is_feasible(settings.protocol, tol=1e-9):
        raise ValueError("initial coefficients are infeasible")
    f0, st = objective(scn, coeffs)
    mu_t = mu_u = float(settings.mu_init)
    state = GdState(coeffs, mu_t, mu_u, f0, 0, [(0, f0, mu_t, mu_u)], f_init=f0)
    th0, u0 = _stack(coeffs)
    for it in range(1, settings.iter_max + 1):
        g_t, g_u = grad(scn, st, _unstack(th0, u0))
        th = project_theta(th0 - mu_t * np.conj(g_t))
        if settings.protocol == "MS":
            u = project_u_ms(g_u)
        else:
            th, u = _absorb_sign(th, u0 - mu_u * g_u)
            u = project_u_es(u)
        cand = _unstack(th, u)
        f, st_new = objective(scn, cand)
        if f > f0 - mu_t * np.sum(np.abs(g_t) ** 2):
            mu_t *= settings.varrho
        if f > f0 - mu_u * np.sum(g_u ** 2):
            mu_u *= settings.varrho
        done = abs(f - f0) <= settings.epsilon
        if f < f0:
            th0, u0, f0, st = th, u, f, st_new
        state.trace.append((it, f0, mu_t, mu_u))
        state.iter = it
        if done:
            break
    state.coeffs, state.f, state.mu_theta, state.mu_u = _unstack(th0, u0), f0, mu_t, mu_u
    return state
