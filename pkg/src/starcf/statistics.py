"""Realization-free second-order statistics: Delta, Psi, Q and the NMSE."""

from dataclasses import dataclass

import numpy as np

from .phase import phase_characteristic
from .scenario import SIDES


def herm(X):
    return 0.5 * (X + np.swapaxes(X, -1, -2).conj())


def phase_averaged_rank1(g_bar_u, phi):
    """phi^2 G + (1 - phi^2) (G o I) with G = g g^H (batched over leading axes)."""
    G = g_bar_u[..., :, None] * g_bar_u[..., None, :].conj()
    return _avg(G, phi)


def phase_averaged_corr(R_sris, phi):
    return _avg(np.asarray(R_sris, dtype=complex), phi)


def _avg(X, phi):
    out = phi ** 2 * X
    i = np.arange(X.shape[-1])
    out[..., i, i] = X[..., i, i]
    return out


def congruence(d, X):
    """diag(d) X diag(d)^H for a diagonal given as a vector."""
    return d[..., :, None] * X * d[..., None, :].conj()


def t_matrices(coeffs, A_bar_u, R_bar_sris, side):
    d = coeffs.diag(side)
    return congruence(d, A_bar_u), congruence(d, R_bar_sris)


@dataclass
class ChannelStatistics:
    phi: float
    R_bar: np.ndarray       # (L, L) phase-averaged R_SRIS
    A_bar: np.ndarray       # (K, L, L)
    T_bar: np.ndarray       # (K, L, L)
    T_side: dict            # side -> (L, L)
    X: np.ndarray           # (K, L, L) bar_beta_u T_bar + tilde_beta_u T
    Delta_d: np.ndarray     # (M, K, N, N)
    Delta_c: np.ndarray
    Delta: np.ndarray
    Psi: np.ndarray
    Q: np.ndarray
    Q_hat: np.ndarray
    Z: np.ndarray
    emi_cov: np.ndarray     # (M, N, N) EMI part of Psi

    def T(self, k, side_of):
        return self.T_side[side_of[k]]


def emi_matrix(scn, T_side, weights=None):
    """bar_b_ap g_ap S g_ap^H + tilde_b_ap R_ap tr(R_SRIS S), S = sum_w sigma_w^2 T_w."""
    if weights is None:
        weights = {s: scn.sigma2(s) for s in SIDES}
    S = sum(weights[s] * T_side[s] for s in SIDES)
    G = scn.g_bar_ap
    los = np.einsum("mil,lj,mkj->mik", G, S, G.conj())
    tr = np.real(np.trace(scn.R_sris @ S))
    return (scn.bar_beta_ap[:, None, None] * los
            + scn.tilde_beta_ap[:, None, None] * scn.R_ap * tr)


def covariance_delta(scn, X):
    """Delta_d, Delta_c for all (m, k) given X_k = bar_b_u T_bar_k + tilde_b_u T_k."""
    Delta_d = scn.beta_d[:, :, None, None] * scn.R_d
    trRX = np.real(np.einsum("ij,kji->k", scn.R_sris, X))
    G = scn.g_bar_ap
    los = np.einsum("mil,klj,mnj->mkin", G, X, G.conj())
    Delta_c = (scn.tilde_beta_ap[:, None, None, None] * scn.R_ap[:, None] * trRX[None, :, None, None]
               + scn.bar_beta_ap[:, None, None, None] * los)
    return Delta_d, herm(Delta_c)


def psi_matrix(scn, Delta, emi_cov):
    p_p = scn.powers[0]
    tp = scn.config.tau_p
    N = scn.N
    Psi = np.empty_like(Delta)
    for k in range(scn.K):
        P = scn.pilot_set(k)
        Psi[:, k] = tp * p_p * Delta[:, P].sum(axis=1) + emi_cov + scn.noise * np.eye(N)
    return herm(Psi)


def q_matrix(Delta, Psi, tau_p, p_p):
    s = np.sqrt(tau_p * p_p)
    PinvD = np.linalg.solve(Psi, Delta)               # Psi^-1 Delta
    Z = s * np.swapaxes(PinvD, -1, -2).conj()         # s Delta Psi^-1
    Q = herm(s * Z @ Delta)
    return Q, Delta - Q, Z


def compute_statistics(scn, coeffs, a=None):
    cfg = scn.config
    phi = phase_characteristic(cfg.a if a is None else a)
    R_bar = phase_averaged_corr(scn.R_sris, phi)
    A_bar = phase_averaged_rank1(scn.g_bar_u, phi)
    T_side = {s: congruence(coeffs.diag(s), R_bar) for s in SIDES}
    D = np.array([coeffs.diag(w) for w in scn.omega])
    T_bar = congruence(D, A_bar)
    Tk = np.array([T_side[w] for w in scn.omega])
    X = scn.bar_beta_u[:, None, None] * T_bar + scn.tilde_beta_u[:, None, None] * Tk
    Delta_d, Delta_c = covariance_delta(scn, X)
    Delta = Delta_d + Delta_c
    emi = emi_matrix(scn, T_side)
    Psi = psi_matrix(scn, Delta, emi)
    p_p = scn.powers[0]
    Q, Q_hat, Z = q_matrix(Delta, Psi, cfg.tau_p, p_p)
    return ChannelStatistics(phi, R_bar, A_bar, T_bar, T_side, X, Delta_d, Delta_c, Delta,
                             Psi, Q, Q_hat, Z, emi)


def nmse_from(Delta, Q):
    den = np.real(np.trace(Delta, axis1=-2, axis2=-1)).sum()
    if den <= 0:
        raise ValueError("zero total channel power")
    return float(np.real(np.trace(Delta - Q, axis1=-2, axis2=-1)).sum() / den)


def nmse(scn, coeffs, a=None):
    st = compute_statistics(scn, coeffs, a)
    return nmse_from(st.Delta, st.Q)
