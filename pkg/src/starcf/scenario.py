"""Deployment: configuration, geometry, large-scale fading, correlation and LOS."""

import json
from dataclasses import dataclass, field, asdict, fields

import numpy as np

C_LIGHT = 299792458.0
SIDES = ("t", "r")


def dbm_to_mw(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


@dataclass
class SystemConfig:
    M: int = 4
    N: int = 2
    K: int = 4
    K_r: int = 2
    K_t: int = 2
    L: int = 16
    L_h: int = 4
    L_v: int = 4
    d_h: float | None = None      # None -> lambda/2
    d_v: float | None = None
    f_c: float = 1.9e9
    p_p: float = 20.0             # dBm
    p_u: float = 20.0
    p_d: float = 23.0
    noise_power: float = -91.0    # dBm
    tau_c: int = 200
    tau_p: int = 3
    rho_db: float = 20.0          # inf switches EMI off
    a: float = np.pi / 8
    kappa_u: float = 10.0
    kappa_ap: float = 10.0
    alpha_u: float = 0.0
    alpha_d: float = 0.0
    protocol: str = "ES"
    ap_corr_coeff: float = 0.5
    shadow_std_db: float = 8.0
    seed: int = 0
    # geometry
    h_ap: float = 15.0
    h_user: float = 1.65
    h_sris: float = 30.0
    sris_xy: tuple = (500.0, 100.0)
    ap_area: tuple = (-100.0, 800.0, -100.0, 100.0)
    user_x: tuple = (300.0, 600.0)
    user_y_span: float = 100.0
    # three-slope path loss (distances in km)
    pl_d0: float = 0.01
    pl_d1: float = 0.05
    pl_fixed_db: float | None = None   # None -> COST-231 Hata term at f_c
    ris_hop_gain_db: float = 60.0      # extra gain on each STAR-RIS hop (calibrated)
    # baselines
    ris_free: bool = False

    def __post_init__(self):
        if self.K_r + self.K_t != self.K:
            raise ValueError("K_r + K_t must equal K")
        if self.L_h * self.L_v != self.L:
            raise ValueError("L_h * L_v must equal L")
        if not self.tau_p < self.tau_c:
            raise ValueError("tau_p must be smaller than tau_c")
        if not (0 <= self.alpha_u <= 1 and 0 <= self.alpha_d <= 1):
            raise ValueError("power-control exponents must lie in [0, 1]")
        if not 0 <= self.a <= np.pi:
            raise ValueError("phase-error half-width must lie in [0, pi]")
        if not 0 <= self.ap_corr_coeff < 1:
            raise ValueError("ap_corr_coeff must lie in [0, 1)")
        if self.protocol not in ("ES", "MS"):
            raise ValueError("protocol must be ES or MS")
        for name in ("M", "N", "K", "L", "tau_p"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        self.sris_xy = tuple(self.sris_xy)
        self.ap_area = tuple(self.ap_area)
        self.user_x = tuple(self.user_x)

    @property
    def wavelength(self):
        return C_LIGHT / self.f_c

    @property
    def spacing(self):
        lam = self.wavelength
        return (self.d_h if self.d_h is not None else lam / 2,
                self.d_v if self.d_v is not None else lam / 2)

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return SystemConfig(**d)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StarRisCoefficients:
    theta_t: np.ndarray
    theta_r: np.ndarray
    u_t: np.ndarray
    u_r: np.ndarray

    def theta(self, side):
        return self.theta_t if side == "t" else self.theta_r

    def u(self, side):
        return self.u_t if side == "t" else self.u_r

    def diag(self, side):
        """Diagonal of Theta_side = diag(u o theta)."""
        return self.u(side) * self.theta(side)

    def copy(self):
        return StarRisCoefficients(self.theta_t.copy(), self.theta_r.copy(),
                                   self.u_t.copy(), self.u_r.copy())

    def is_feasible(self, protocol="ES", tol=1e-12):
        ok = (np.all(np.abs(np.abs(self.theta_t) - 1) <= tol)
              and np.all(np.abs(np.abs(self.theta_r) - 1) <= tol)
              and np.all(self.u_t >= -tol) and np.all(self.u_r >= -tol))
        if protocol == "MS":
            return bool(ok and np.all(np.isin(self.u_t, (0.0, 1.0)))
                        and np.all(self.u_t + self.u_r == 1.0))
        return bool(ok and np.all(np.abs(self.u_t ** 2 + self.u_r ** 2 - 1) <= tol))

    def to_dict(self):
        return {"theta_t": [[float(z.real), float(z.imag)] for z in self.theta_t],
                "theta_r": [[float(z.real), float(z.imag)] for z in self.theta_r],
                "u_t": [float(x) for x in self.u_t],
                "u_r": [float(x) for x in self.u_r]}

    @classmethod
    def from_dict(cls, d):
        cplx = lambda p: np.array([complex(re, im) for re, im in p])
        return cls(cplx(d["theta_t"]), cplx(d["theta_r"]),
                   np.array(d["u_t"], dtype=float), np.array(d["u_r"], dtype=float))


def equal_coefficients(L):
    """u = 1/sqrt(2) on both sides, reflection phase pi/4, transmission 3pi/4."""
    u = np.full(L, 1 / np.sqrt(2))
    return StarRisCoefficients(np.full(L, np.exp(3j * np.pi / 4)),
                               np.full(L, np.exp(1j * np.pi / 4)), u.copy(), u.copy())


def random_coefficients(L, rng, protocol="ES"):
    th_t = np.exp(2j * np.pi * rng.random(L))
    th_r = np.exp(2j * np.pi * rng.random(L))
    if protocol == "MS":
        u_t = (rng.random(L) < 0.5).astype(float)
        return StarRisCoefficients(th_t, th_r, u_t, 1 - u_t)
    ang = 0.5 * np.pi * rng.random(L)
    return StarRisCoefficients(th_t, th_r, np.cos(ang), np.sin(ang))


# ---------------------------------------------------------------- geometry

def sinc_correlation(L_h, L_v, d_h, d_v, lambda_c):
    x = np.arange(L_h * L_v)
    pos = np.stack([np.zeros_like(x, dtype=float), (x % L_h) * d_h, (x // L_h) * d_v], axis=1)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    return np.sinc(2 * dist / lambda_c)


def ap_exponential_correlation(N, r):
    if not 0 <= r < 1:
        raise ValueError("correlation magnitude must lie in [0, 1)")
    n = np.arange(N)
    return (float(r) ** np.abs(n[:, None] - n[None, :])).astype(complex)


def steering_ap(theta, phi, N, d_ap, lam):
    n = np.arange(N)
    return np.exp(2j * np.pi * n * (d_ap / lam) * np.cos(theta) * np.sin(phi))


def steering_sris(theta, phi, L_h, L_v, d_h, d_v, lam):
    # element x: horizontal index x % L_h, vertical index x // L_h (same order
    # as sinc_correlation), hence vertical factor first in the Kronecker product
    hor = np.exp(2j * np.pi * np.arange(L_h) * (d_h / lam) * np.cos(theta) * np.sin(phi))
    ver = np.exp(2j * np.pi * np.arange(L_v) * (d_v / lam) * np.cos(phi))
    return np.kron(ver, hor)


def direction_angles(src, dst):
    """(azimuth, zenith) of dst seen from src; cos(az) sin(zen) is the x cosine."""
    v = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    r = np.linalg.norm(v)
    return np.arctan2(v[1], v[0]), np.arccos(np.clip(v[2] / r, -1.0, 1.0))


def cost231_fixed_term(f_c, h_ap, h_user):
    f = f_c / 1e6
    return (46.3 + 33.9 * np.log10(f) - 13.82 * np.log10(h_ap)
            - (1.1 * np.log10(f) - 0.7) * h_user + (1.56 * np.log10(f) - 0.8))


def path_loss_db(distance_m, cfg):
    """Three-slope path loss in dB (negative), distance is 3-D in metres."""
    Lc = cfg.pl_fixed_db if cfg.pl_fixed_db is not None else cost231_fixed_term(
        cfg.f_c, cfg.h_ap, cfg.h_user)
    d = np.asarray(distance_m, dtype=float) / 1000.0
    d0, d1 = cfg.pl_d0, cfg.pl_d1
    far = -Lc - 35 * np.log10(np.maximum(d, 1e-12))
    mid = -Lc - 15 * np.log10(d1) - 20 * np.log10(np.maximum(d, 1e-12))
    near = -Lc - 15 * np.log10(d1) - 20 * np.log10(d0)
    return np.where(d > d1, far, np.where(d > d0, mid, near))


def path_loss_and_shadowing(distance_m, cfg, rng, gain_db=0.0):
    pl = path_loss_db(distance_m, cfg) + gain_db
    d = np.asarray(distance_m, dtype=float) / 1000.0
    z = np.where(d > cfg.pl_d1, cfg.shadow_std_db * rng.standard_normal(np.shape(d)), 0.0)
    return 10.0 ** ((pl + z) / 10.0)


# ---------------------------------------------------------------- scenario

@dataclass
class Scenario:
    config: SystemConfig
    ap_positions: np.ndarray
    user_positions: np.ndarray
    sris_position: np.ndarray
    omega: list
    beta_d: np.ndarray          # (M, K)
    beta_ap: np.ndarray         # (M,)
    beta_u: np.ndarray          # (K,)
    R_d: np.ndarray             # (M, K, N, N)
    R_ap: np.ndarray            # (M, N, N)
    R: np.ndarray               # (L, L) sinc matrix
    A: float
    g_bar_ap: np.ndarray        # (M, N, L)
    g_bar_u: np.ndarray         # (K, L)
    pilot: np.ndarray           # (K,) pilot index
    sigma_r2: float
    sigma_t2: float
    extras: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.config.M

    @property
    def N(self):
        return self.config.N

    @property
    def K(self):
        return self.config.K

    @property
    def L(self):
        return self.config.L

    @property
    def R_sris(self):
        return self.A * self.R

    @property
    def bar_beta_ap(self):
        k = self.config.kappa_ap
        return self.beta_ap * k / (k + 1)

    @property
    def tilde_beta_ap(self):
        return self.beta_ap / (self.config.kappa_ap + 1)

    @property
    def bar_beta_u(self):
        k = self.config.kappa_u
        return self.beta_u * k / (k + 1)

    @property
    def tilde_beta_u(self):
        return self.beta_u / (self.config.kappa_u + 1)

    @property
    def noise(self):
        return float(dbm_to_mw(self.config.noise_power))

    @property
    def powers(self):
        c = self.config
        return float(dbm_to_mw(c.p_p)), float(dbm_to_mw(c.p_u)), float(dbm_to_mw(c.p_d))

    def pilot_set(self, k):
        return [j for j in range(self.K) if self.pilot[j] == self.pilot[k]]

    def side_users(self, side):
        return [k for k in range(self.K) if self.omega[k] == side]

    def sigma2(self, side):
        return self.sigma_t2 if side == "t" else self.sigma_r2

    def replace(self, **kw):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return Scenario(**d)

    # ---- JSON round trip
    def to_json(self):
        def enc(x):
            x = np.asarray(x)
            if np.iscomplexobj(x):
                return {"shape": list(x.shape), "re": x.real.ravel().tolist(),
                        "im": x.imag.ravel().tolist()}
            return {"shape": list(x.shape), "re": x.ravel().tolist()}
        doc = {"config": self.config.to_dict(), "omega": list(self.omega),
               "A": self.A, "sigma_r2": self.sigma_r2, "sigma_t2": self.sigma_t2}
        for name in ("ap_positions", "user_positions", "sris_position", "beta_d", "beta_ap",
                     "beta_u", "R_d", "R_ap", "R", "g_bar_ap", "g_bar_u", "pilot"):
            doc[name] = enc(getattr(self, name))
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)

        def dec(d):
            x = np.array(d["re"], dtype=float)
            if "im" in d:
                x = x + 1j * np.array(d["im"], dtype=float)
            return x.reshape(d["shape"])
        kw = {name: dec(doc[name]) for name in (
            "ap_positions", "user_positions", "sris_position", "beta_d", "beta_ap", "beta_u",
            "R_d", "R_ap", "R", "g_bar_ap", "g_bar_u", "pilot")}
        kw["pilot"] = kw["pilot"].astype(int)
        return cls(config=SystemConfig.from_dict(doc["config"]), omega=doc["omega"],
                   A=doc["A"], sigma_r2=doc["sigma_r2"], sigma_t2=doc["sigma_t2"], **kw)


def emi_powers(beta_ap, beta_u, omega, cfg, side):
    """EMI power impinging on the surface from one side (linear mW)."""
    if not np.isfinite(cfg.rho_db):
        return 0.0
    rho = 10.0 ** (cfg.rho_db / 10.0)
    users = [k for k in range(len(omega)) if omega[k] == side]
    if not users:
        raise ValueError(f"no users on side {side!r}")
    _, p_u, p_d = (float(dbm_to_mw(x)) for x in (cfg.p_p, cfg.p_u, cfg.p_d))
    bu = np.sum(np.asarray(beta_u)[users])
    if side == "r":
        M = len(beta_ap)
        return float(np.sqrt(p_u * p_d * np.sum(beta_ap) * bu / (M * len(users) * rho ** 2)))
    return float(p_u * bu / (len(users) * rho))


def los_components(ap_positions, sris_position, user_positions, cfg):
    lam = cfg.wavelength
    d_h, d_v = cfg.spacing
    gap = []
    for p in ap_positions:
        th_a, ph_a = direction_angles(p, sris_position)
        th_d, ph_d = direction_angles(sris_position, p)
        a_ap = steering_ap(th_a, ph_a, cfg.N, lam / 2, lam)
        a_s = steering_sris(th_d, ph_d, cfg.L_h, cfg.L_v, d_h, d_v, lam)
        gap.append(np.outer(a_ap, a_s.conj()))
    gu = []
    for p in user_positions:
        th, ph = direction_angles(sris_position, p)
        gu.append(steering_sris(th, ph, cfg.L_h, cfg.L_v, d_h, d_v, lam))
    return np.array(gap), np.array(gu)


def build_topology(cfg, rng=None):
    """Random deployment; a pure function of (cfg, seed)."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    M, N, K = cfg.M, cfg.N, cfg.K
    x0, x1, y0, y1 = cfg.ap_area
    aps = np.column_stack([rng.uniform(x0, x1, M), rng.uniform(y0, y1, M), np.full(M, cfg.h_ap)])
    sx, sy = cfg.sris_xy
    sris = np.array([sx, sy, cfg.h_sris])
    # users 0..K_r-1 reflect (y below the surface), the rest transmit
    ux = rng.uniform(*cfg.user_x, K)
    off = rng.uniform(0, cfg.user_y_span, K)
    uy = np.where(np.arange(K) < cfg.K_r, sy - cfg.user_y_span + off, sy + cfg.user_y_span - off)
    # keep strict separation from the surface line
    uy = np.where(np.arange(K) < cfg.K_r, np.minimum(uy, np.nextafter(sy, -np.inf)),
                  np.maximum(uy, np.nextafter(sy, np.inf)))
    users = np.column_stack([ux, uy, np.full(K, cfg.h_user)])
    omega = ["r" if k < cfg.K_r else "t" for k in range(K)]

    d_mk = np.linalg.norm(aps[:, None, :] - users[None, :, :], axis=-1)
    d_ap = np.linalg.norm(aps - sris, axis=-1)
    d_u = np.linalg.norm(users - sris, axis=-1)
    beta_d = path_loss_and_shadowing(d_mk, cfg, rng)
    beta_ap = path_loss_and_shadowing(d_ap, cfg, rng, cfg.ris_hop_gain_db)
    beta_u = path_loss_and_shadowing(d_u, cfg, rng, cfg.ris_hop_gain_db)
    if cfg.ris_free:
        beta_u = np.zeros(K)

    lam = cfg.wavelength
    d_h, d_v = cfg.spacing
    R = sinc_correlation(cfg.L_h, cfg.L_v, d_h, d_v, lam)
    Rn = ap_exponential_correlation(N, cfg.ap_corr_coeff)
    R_ap = np.broadcast_to(Rn, (M, N, N)).copy()
    R_d = np.broadcast_to(Rn, (M, K, N, N)).copy()
    g_bar_ap, g_bar_u = los_components(aps, sris, users, cfg)
    pilot = np.arange(K) % cfg.tau_p

    sig = {}
    for side in SIDES:
        has = any(o == side for o in omega)
        sig[side] = emi_powers(beta_ap, beta_u, omega, cfg, side) if has else 0.0
    return Scenario(cfg, aps, users, sris, omega, beta_d, beta_ap, beta_u, R_d, R_ap, R,
                    float(d_h * d_v), g_bar_ap, g_bar_u, pilot, sig["r"], sig["t"])
