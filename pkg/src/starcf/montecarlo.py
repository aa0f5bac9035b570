"""Monte-Carlo oracle: sample channels, phase errors, EMI and noise per block."""

from dataclasses import dataclass

import numpy as np

from .scenario import SIDES

CHUNK = 250


def psd_sqrt(X, tol=1e-10):
    w, V = np.linalg.eigh(0.5 * (X + np.swapaxes(X, -1, -2).conj()))
    w = np.where(w < tol * np.max(np.abs(w), axis=-1, keepdims=True), 0.0, w)
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2).conj()


def crandn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def chunk_rng(seed, c):
    """Counter-based substream: chunk c of a run is a pure function of (seed, c)."""
    return np.random.default_rng([int(seed), int(c)])


def chunks(n_blocks):
    out, c, left = [], 0, n_blocks
    while left > 0:
        out.append((c, min(CHUNK, left)))
        left -= CHUNK
        c += 1
    return out


@dataclass
class ChannelRealization:
    g_d: np.ndarray        # (n, M, K, N)
    g_ap: np.ndarray       # (n, M, N, L)
    g_u: np.ndarray        # (n, K, L)
    phase_err: np.ndarray  # (n, 2, L) ordered as SIDES
    phi_k: np.ndarray      # (n, K)
    g: np.ndarray          # (n, M, K, N)

    def D(self, side):
        return np.exp(1j * self.phase_err[:, SIDES.index(side)])


class Sampler:
    """Holds the square roots needed to draw realizations for one scenario."""

    def __init__(self, scn, coeffs):
        self.scn = scn
        self.coeffs = coeffs
        self.Rs_half = psd_sqrt(scn.R_sris)
        self.Rap_half = psd_sqrt(scn.R_ap)
        self.Rd_half = psd_sqrt(scn.R_d)
        self.theta = {s: coeffs.diag(s) for s in SIDES}

    def realization(self, rng, n):
        scn = self.scn
        M, N, K, L = scn.M, scn.N, scn.K, scn.L
        g_d = np.sqrt(scn.beta_d)[None, :, :, None] * np.einsum(
            "mkij,nmkj->nmki", self.Rd_half, crandn(rng, (n, M, K, N)))
        V = crandn(rng, (n, M, N, L))
        g_ap = (np.sqrt(scn.bar_beta_ap)[None, :, None, None] * scn.g_bar_ap[None]
                + np.sqrt(scn.tilde_beta_ap)[None, :, None, None]
                * np.einsum("mij,nmjl,lq->nmiq", self.Rap_half, V, self.Rs_half))
        phi_k = rng.uniform(-np.pi, np.pi, (n, K))
        g_u = (np.sqrt(scn.bar_beta_u)[None, :, None] * np.exp(1j * phi_k)[..., None]
               * scn.g_bar_u[None]
               + np.sqrt(scn.tilde_beta_u)[None, :, None]
               * crandn(rng, (n, K, L)) @ self.Rs_half.T)
        a = scn.config.a
        err = rng.uniform(-a, a, (n, 2, L)) if a > 0 else np.zeros((n, 2, L))
        # x_k = Tb_w Theta_w g_u,k
        x = np.empty((n, K, L), dtype=complex)
        for k, w in enumerate(scn.omega):
            x[:, k] = np.exp(1j * err[:, SIDES.index(w)]) * self.theta[w] * g_u[:, k]
        g = g_d + np.einsum("nmil,nkl->nmki", g_ap, x)
        return ChannelRealization(g_d, g_ap, g_u, err, phi_k, g)

    def emi(self, rng, n, side, cols=()):
        """n_w ~ CN(0, A sigma_w^2 R), shape (n, L) + cols."""
        L = self.scn.L
        s2 = self.scn.sigma2(side)
        w = crandn(rng, (n,) + tuple(cols) + (L,)) @ self.Rs_half.T
        return np.sqrt(s2) * w

    def reradiate(self, real, side, n_w):
        """g_ap,m Tb_w Theta_w n_w for every AP; n_w shape (n, ..., L)."""
        d = real.D(side) * self.theta[side]
        d = d.reshape(d.shape[:1] + (1,) * (n_w.ndim - 2) + d.shape[1:])
        return np.einsum("nmil,n...l->n...mi", real.g_ap, d * n_w)

    def pilot_phase(self, real, rng, stats):
        """Projected pilot signals y (n, M, K, N) and MMSE estimates g_hat."""
        scn = self.scn
        n = real.g.shape[0]
        tp = scn.config.tau_p
        s = np.sqrt(tp * scn.powers[0])
        Yp = np.zeros((n, scn.M, scn.N, tp), dtype=complex)
        for k in range(scn.K):
            Yp[..., scn.pilot[k]] += s * real.g[:, :, k]
        for side in SIDES:
            Nw = self.emi(rng, n, side, cols=(tp,))                 # (n, tp, L)
            Yp += np.moveaxis(self.reradiate(real, side, Nw), 1, -1)  # (n, M, N, tp)
        Yp += np.sqrt(scn.noise) * crandn(rng, Yp.shape)
        y = np.moveaxis(Yp[..., scn.pilot], -1, 2)                # (n, M, K, N)
        g_hat = np.einsum("mkij,nmkj->nmki", stats.Z, y)
        return y, g_hat


# ------------------------------------------------------------ estimators

def mc_covariance(scn, coeffs, n_blocks, seed=0):
    """Sample E{g g^H} per (m, k) with entrywise standard errors (re, im)."""
    smp = Sampler(scn, coeffs)
    acc = acc2r = acc2i = 0.0
    for c, n in chunks(n_blocks):
        real = smp.realization(chunk_rng(seed, c), n)
        gg = real.g[..., :, None] * real.g[..., None, :].conj()
        acc = acc + gg.sum(0)
        acc2r = acc2r + (gg.real ** 2).sum(0)
        acc2i = acc2i + (gg.imag ** 2).sum(0)
    mean = acc / n_blocks
    se_r = np.sqrt(np.maximum(acc2r / n_blocks - mean.real ** 2, 0) / n_blocks)
    se_i = np.sqrt(np.maximum(acc2i / n_blocks - mean.imag ** 2, 0) / n_blocks)
    return mean, se_r, se_i


def mc_nmse(scn, coeffs, stats, n_blocks, seed=0):
    """Ratio estimate sum E||g - g_hat||^2 / sum E||g||^2 and its delta-method SE."""
    smp = Sampler(scn, coeffs)
    e_all, d_all = [], []
    for c, n in chunks(n_blocks):
        rng = chunk_rng(seed, c)
        real = smp.realization(rng, n)
        _, g_hat = smp.pilot_phase(real, rng, stats)
        e_all.append(np.sum(np.abs(real.g - g_hat) ** 2, axis=(1, 2, 3)))
        d_all.append(np.sum(np.abs(real.g) ** 2, axis=(1, 2, 3)))
    e, d = np.concatenate(e_all), np.concatenate(d_all)
    r = e.mean() / d.mean()
    se = np.std(e - r * d, ddof=1) / np.sqrt(len(e)) / d.mean()
    return float(r), float(se)


def _jackknife(stat, parts):
    """Jackknife bias-corrected estimate and delete-one-batch standard error.

    The SE statistics are ratios of squared sample means, whose O(1/n) bias is
    comparable to the standard error for weak users; the correction removes it.
    """
    tot = sum(parts)
    full = stat(tot)
    B = len(parts)
    if B < 2:
        return full, np.zeros_like(full)
    reps = np.array([stat(tot - p) for p in parts])
    se = np.sqrt((B - 1) / B * np.sum((reps - reps.mean(0)) ** 2, axis=0))
    return B * full - (B - 1) * reps.mean(0), se


class _Acc:
    """Container of per-batch moment sums (supports +, -, scalar division)."""

    def __init__(self, **kw):
        self.d = kw

    def __add__(self, o):
        if isinstance(o, (int, float)) and o == 0:
            return self
        return _Acc(**{k: self.d[k] + o.d[k] for k in self.d})

    __radd__ = __add__

    def __sub__(self, o):
        return _Acc(**{k: self.d[k] - o.d[k] for k in self.d})


def lsfd_sinr(b, B, pe):
    """max_a p eta |a^H b|^2 / (a^H B a - p eta |a^H b|^2) with a = B^-1 b."""
    x = np.real(b.conj() @ np.linalg.solve(B, b))
    return pe * x / (1 - pe * x)


def local_mmse_combiners(scn, stats, g_hat, eta):
    """Rows v_mk = g_hat_mk^H C_m^-1 (n, M, K, N)."""
    p_u = scn.powers[1]
    w = p_u * eta
    C = (np.einsum("k,nmki,nmkj->nmij", w, g_hat, g_hat.conj())
         + np.einsum("k,mkij->mij", w, stats.Q_hat)[None]
         + stats.emi_cov[None] + scn.noise * np.eye(scn.N))
    sol = np.linalg.solve(C, np.swapaxes(g_hat, -1, -2))       # C^-1 g_hat (n, M, N, K)
    return np.swapaxes(sol, -1, -2).conj()


def uplink_mc_se(scn, coeffs, stats, eta, combiner="MR", n_blocks=10000, seed=0,
                 return_moments=False):
    """UatF SE per user with LSFD weights formed from the sampled moments."""
    if combiner not in ("MR", "localMMSE"):
        raise ValueError("combiner must be MR or localMMSE")
    smp = Sampler(scn, coeffs)
    K = scn.K
    p_u = scn.powers[1]
    parts = []
    for c, n in chunks(n_blocks):
        rng = chunk_rng(seed, c)
        real = smp.realization(rng, n)
        _, g_hat = smp.pilot_phase(real, rng, stats)
        if combiner == "MR":
            v = g_hat.conj()
        else:
            v = local_mmse_combiners(scn, stats, g_hat, eta)
        # w[n, k, k', m] = v_mk g_mk'
        w = np.einsum("nmki,nmji->nkjm", v, real.g)
        b = np.einsum("nkkm->km", w)
        S = np.einsum("nkjm,nkjq->kjmq", w, w.conj())
        G = 0.0
        for side in SIDES:
            # E over data EMI given the channel: sigma^2 (v G D) R_S (v G D)^H
            d = real.D(side) * smp.theta[side]
            vg = np.einsum("nmki,nmil->nkml", v, real.g_ap) * d[:, None, None, :]
            q = vg @ smp.Rs_half
            G = G + scn.sigma2(side) * np.einsum("nkml,nkql->kmq", q, q.conj())
        lam = scn.noise * np.sum(np.abs(v) ** 2, axis=(0, 3)).T   # (K, M)
        parts.append(_Acc(n=np.array(float(n)), b=b, S=S, G=G, lam=lam))

    def se_of(acc):
        n = acc.d["n"]
        b, S, G, lam = (acc.d[k] / n for k in ("b", "S", "G", "lam"))
        out = np.empty(K)
        for k in range(K):
            B = p_u * np.einsum("j,jmq->mq", eta, S[k]) + G[k] + np.diag(lam[k])
            out[k] = lsfd_sinr(b[k], B, p_u * eta[k])
        return out

    pref = (scn.config.tau_c - scn.config.tau_p) / scn.config.tau_c
    stat = lambda acc: pref * np.log2(1 + se_of(acc))
    se, err = _jackknife(stat, parts)
    if return_moments:
        tot = sum(parts)
        n = tot.d["n"]
        return se, err, {k: tot.d[k] / n for k in ("b", "S", "G", "lam")}
    return se, err


def rzf_regularizer(scn, stats):
    """eps_k = sigma_r^2 (bar_b_u g_u^H T g_u + tilde_b_u tr(R_SRIS T)) + sigma^2."""
    eps = np.empty(scn.K)
    for k, w in enumerate(scn.omega):
        T = stats.T_side[w]
        g = scn.g_bar_u[k]
        val = (scn.bar_beta_u[k] * np.real(g.conj() @ T @ g)
               + scn.tilde_beta_u[k] * np.real(np.trace(scn.R_sris @ T)))
        eps[k] = scn.sigma_r2 * val + scn.noise
    return eps


def precoders(scn, stats, g_hat, kind):
    """f_mk, shape (n, M, K, N)."""
    if kind == "conjugate":
        return g_hat.conj()
    if kind != "RZF":
        raise ValueError("precoder must be conjugate or RZF")
    eps = rzf_regularizer(scn, stats)
    gc = g_hat.conj()
    C = np.einsum("nmki,nmkj->nmij", gc, g_hat)       # sum_k g^* g^T
    I = np.eye(scn.N)
    f = np.empty_like(g_hat)
    for k in range(scn.K):
        f[:, :, k] = np.linalg.solve(C + eps[k] * I, gc[:, :, k, :, None])[..., 0]
    return f


def downlink_mc_se(scn, coeffs, stats, eta_d, precoder="conjugate", n_blocks=10000, seed=0,
                   return_moments=False):
    """Downlink SE per user: DS mean, per-user interference moments, EMI and noise."""
    smp = Sampler(scn, coeffs)
    K = scn.K
    p_d = scn.powers[2]
    sq = np.sqrt(eta_d)                      # (M, K)
    parts = []
    for c, n in chunks(n_blocks):
        rng = chunk_rng(seed, c)
        real = smp.realization(rng, n)
        _, g_hat = smp.pilot_phase(real, rng, stats)
        f = precoders(scn, stats, g_hat, precoder)
        # z[n, k, k'] = sum_m sqrt(eta_mk') g_mk^T f_mk'
        z = np.einsum("mj,nmki,nmji->nkj", sq, real.g, f)
        ds = np.einsum("nkk->k", z)
        I = np.sum(np.abs(z) ** 2, axis=0)
        # user-side EMI: g_u^T Tb Theta n_r, E over n_r given the channel
        emi = np.zeros(K)
        for k, w in enumerate(scn.omega):
            x = real.D(w) * smp.theta[w] * real.g_u[:, k]
            emi[k] = scn.sigma_r2 * np.sum(np.abs(x @ smp.Rs_half) ** 2)
        parts.append(_Acc(n=np.array(float(n)), ds=ds, I=I, emi=emi))

    def sinr_of(acc):
        n = acc.d["n"]
        ds, I, emi = acc.d["ds"] / n, acc.d["I"] / n, acc.d["emi"] / n
        num = p_d * np.abs(ds) ** 2
        return num / (p_d * I.sum(1) - num + emi + scn.noise)

    pref = (scn.config.tau_c - scn.config.tau_p) / scn.config.tau_c
    se, err = _jackknife(lambda acc: pref * np.log2(1 + sinr_of(acc)), parts)
    if return_moments:
        tot = sum(parts)
        n = tot.d["n"]
        return se, err, {k: tot.d[k] / n for k in ("ds", "I", "emi")}
    return se, err


def mc_precoder_power(scn, coeffs, stats, precoder, n_blocks=2000, seed=0):
    """E||f_mk||^2 per (m, k)."""
    smp = Sampler(scn, coeffs)
    acc = 0.0
    for c, n in chunks(n_blocks):
        rng = chunk_rng(seed, c)
        real = smp.realization(rng, n)
        _, g_hat = smp.pilot_phase(real, rng, stats)
        acc = acc + np.sum(np.abs(precoders(scn, stats, g_hat, precoder)) ** 2, axis=(0, 3))
    return acc / n_blocks
