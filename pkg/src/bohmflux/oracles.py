"""Closed-form ground truth for the three worked examples.

* quadratic pair: H = (P_X^2 + P_Y^2)/2 + (X - Y)^2/4 from the factorized
  Gaussian pi^{-1/2} exp(-(x^2 + y^2)/2);
* momentum coupling: H = -lambda P_X P_Y from the same initial state;
* spin steering: entangled spinor under exp(-i v t P_Y |up_Y><up_Y|), free
  spreading neglected.

Units hbar = m = 1 except where the steering oracle carries a mass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

# ---------------------------------------------------------------------------
# Quadratic pair


def qp_a(t):
    return (np.sqrt(1 + np.asarray(t) ** 2) + 1) / 2


def qp_b(t):
    return (np.sqrt(1 + np.asarray(t) ** 2) - 1) / 2


def qp_c(t):
    t = np.asarray(t)
    return -t ** 2 + 4 * np.sqrt(t ** 2 + 1) + np.pi - 4


def qp_d(t):
    t = np.asarray(t)
    return t ** 2 + 4 * np.sqrt(t ** 2 + 1) + np.pi - 4


def qp_psi(x, y, t):
    """Joint wave function; the relative coordinate x - y sits in its oscillator
    ground state and the centre of mass x + y spreads freely."""
    x, y, t = np.asarray(x), np.asarray(y), np.asarray(t)
    q = 1 + 1j * t
    return np.exp(-0.25 * ((x - y) ** 2 + (x + y) ** 2 / q + 2j * t)) / np.sqrt(np.pi * q)


def qp_Y(t, x0, y0):
    return qp_b(t) * x0 + qp_a(t) * y0


def qp_X(t, x0, y0):
    return qp_a(t) * x0 + qp_b(t) * y0


def qp_Ydot(t, x0, y0):
    t = np.asarray(t)
    return (x0 + y0) * t / (2 * np.sqrt(1 + t ** 2))


def qp_cwf(x, t, x0, y0):
    """Unnormalized conditional wave function Psi(x, Y_t, t)."""
    return qp_psi(x, qp_Y(t, x0, y0), t)


def qp_u(t, Y):
    t = np.asarray(t)
    return 3 / 8 + t ** 2 * np.asarray(Y) ** 2 / (4 * t ** 2 + 8)


def qp_du(t, Y, Ydot):
    t = np.asarray(t)
    return t * Y * (t * (t ** 2 + 2) * Ydot + 2 * Y) / (2 * (t ** 2 + 2) ** 2)


def qp_du_int(t, Y):
    t = np.asarray(t)
    return t * np.asarray(Y) ** 2 / (2 * (2 + t ** 2))


def qp_du_ent(t, Y, Ydot):
    t = np.asarray(t)
    return t ** 2 * Y * ((t ** 2 + 2) * Ydot - t * Y) / (2 * (t ** 2 + 2) ** 2)


def qp_cum_int(t, x0, y0):
    """Time integral of the interaction rate from 0 to t along the trajectory."""
    t = np.asarray(t)
    return (4 * (x0 ** 2 - y0 ** 2) * np.arctan(np.sqrt(t ** 2 + 1))
            - (x0 + y0) * (qp_c(t) * x0 - qp_d(t) * y0)
            + 4 * x0 * y0 * np.log(2 / (t ** 2 + 2))) / 16


def qp_cum_ent(t, x0, y0):
    return qp_u(t, qp_Y(t, x0, y0)) - qp_u(0.0, y0) - qp_cum_int(t, x0, y0)


def qp_mean_delta_u(t):
    return np.asarray(t) ** 2 / 16


def qp_expectation_hs(t):
    return 3 / 8 + np.asarray(t) ** 2 / 16


# ---------------------------------------------------------------------------
# Momentum coupling


def pp_f(t, lam):
    return 1 + lam ** 2 * np.asarray(t) ** 2


def pp_psi(x, y, t, lam):
    """Solution under H = -lambda P_X P_Y alone."""
    f = pp_f(t, lam)
    return np.exp(-(x ** 2 + y ** 2 + 2j * lam * x * y * t) / (2 * f)) / np.sqrt(np.pi * f)


def pp_u_of_y(t, y, lam):
    f = pp_f(t, lam)
    return (lam ** 2 * t ** 2 * (2 * np.asarray(y) ** 2 + 1) + 1) / (4 * f ** 2)


def pp_slice_rate(x, y, t, lam):
    """Diagonal <x,y| -i[H_int, sigma] |x,y> of the interaction commutator."""
    f = pp_f(t, lam)
    r2 = np.asarray(x) ** 2 + np.asarray(y) ** 2
    return 2 * lam ** 2 * t / (np.pi * f ** 3) * np.exp(-r2 / f) * (r2 - f)


def pp_avg_ent_rate(t, lam):
    """Ensemble-averaged entanglement rate; equals -<<du_int>>."""
    t = np.asarray(t)
    return lam ** 4 * t ** 3 / (2 * pp_f(t, lam) ** 2)


def pp_expectation_hs(t, lam=1.0):
    return np.full(np.shape(t), 0.25)


# ---------------------------------------------------------------------------
# Spin steering


@dataclass(frozen=True)
class SpinSteeringOracle:
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    k: float = 2.0
    v: float = 20.0
    m: float = 1.0

    def f(self, x):
        return (2 * np.pi * self.sigma_x ** 2) ** -0.25 * np.exp(-np.asarray(x) ** 2 / (4 * self.sigma_x ** 2))

    def g(self, y):
        return (2 * np.pi * self.sigma_y ** 2) ** -0.25 * np.exp(-np.asarray(y) ** 2 / (4 * self.sigma_y ** 2))

    @property
    def energy_0(self) -> float:
        return 1 / (8 * self.m * self.sigma_x ** 2)

    @property
    def splitting(self) -> float:
        return self.k ** 2 / (2 * self.m)

    @property
    def energy_k(self) -> float:
        return self.energy_0 + self.splitting

    def moving_fraction(self, y, t):
        """g^2(y - vt) / (g^2(y - vt) + g^2(y)), evaluated without overflow."""
        y = np.asarray(y, dtype=float)
        s = self.v * np.asarray(t)
        return expit((y ** 2 - (y - s) ** 2) / (2 * self.sigma_y ** 2))


def ss_vy(y, t, oracle: SpinSteeringOracle = SpinSteeringOracle()):
    return oracle.v * oracle.moving_fraction(y, t)


def ss_u(Y, t, oracle: SpinSteeringOracle = SpinSteeringOracle()):
    return oracle.energy_0 + oracle.splitting * oracle.moving_fraction(Y, t)


def ss_mu(x, y, t, oracle: SpinSteeringOracle = SpinSteeringOracle()):
    s = oracle.v * np.asarray(t)
    return oracle.f(x) ** 2 * (oracle.g(np.asarray(y) - s) ** 2 + oracle.g(y) ** 2) / 2


# ---------------------------------------------------------------------------
# Self-consistency suites

_D1 = np.array([1, -8, 0, 8, -1]) / 12.0
_D2 = np.array([-1, 16, -30, 16, -1]) / 12.0
_OFF = np.arange(-2, 3)


def _d1(fn, h):
    return sum(c * fn(o * h) for c, o in zip(_D1, _OFF) if c) / h


def _d2(fn, h):
    return sum(c * fn(o * h) for c, o in zip(_D2, _OFF)) / h ** 2


def _points(rng, n, spread=2.0, tmax=3.0):
    return (rng.uniform(-spread, spread, n), rng.uniform(-spread, spread, n),
            rng.uniform(0.05, tmax, n))


def qp_schrodinger_residual(n=1000, seed=0, h=1e-2) -> float:
    x, y, t = _points(np.random.default_rng(seed), n)
    dt = _d1(lambda e: qp_psi(x, y, t + e), h)
    lap = _d2(lambda e: qp_psi(x + e, y, t), h) + _d2(lambda e: qp_psi(x, y + e, t), h)
    res = 1j * dt - (-0.5 * lap + (x - y) ** 2 / 4 * qp_psi(x, y, t))
    return float(np.max(np.abs(res)))


def pp_schrodinger_residual(lam=1.0, n=1000, seed=0, h=1e-2) -> float:
    x, y, t = _points(np.random.default_rng(seed), n, tmax=2.0 / max(abs(lam), 1e-12))
    h_t = h / max(abs(lam), 1.0)
    dt = _d1(lambda e: pp_psi(x, y, t + e, lam), h_t)
    dxy = _d1(lambda e: _d1(lambda s: pp_psi(x + e, y + s, t, lam), h), h)
    res = 1j * dt - lam * dxy
    return float(np.max(np.abs(res)))


def qp_trajectory_velocity_residual(n=1000, seed=0, h=1e-4) -> float:
    """|dY/dt - Im(d_y Psi / Psi)| along the closed-form trajectories."""
    rng = np.random.default_rng(seed)
    x0, y0 = rng.normal(scale=np.sqrt(0.5), size=(2, n))
    t = rng.uniform(0.0, 3.0, n)
    X, Y = qp_X(t, x0, y0), qp_Y(t, x0, y0)
    dpsi = _d1(lambda e: qp_psi(X, Y + e, t), h)
    v = np.imag(dpsi / qp_psi(X, Y, t))
    return float(np.max(np.abs(v - qp_Ydot(t, x0, y0))))


def ss_continuity_residual(oracle: SpinSteeringOracle = SpinSteeringOracle(),
                           n=1000, seed=0, h=1e-4) -> float:
    rng = np.random.default_rng(seed)
    tau = 6 * oracle.sigma_y / oracle.v
    x = rng.uniform(-2, 2, n) * oracle.sigma_x
    t = rng.uniform(0, tau, n)
    y = rng.uniform(-3 * oracle.sigma_y, 3 * oracle.sigma_y + oracle.v * t)
    dmu = _d1(lambda e: ss_mu(x, y, t + e, oracle), h)
    flux = _d1(lambda e: ss_vy(y + e, t, oracle) * ss_mu(x, y + e, t, oracle), h)
    return float(np.max(np.abs(dmu + flux)))


def qp_algebraic_residual(n=10_000, seed=0) -> float:
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 3, n)
    Y = rng.normal(scale=2, size=n)
    Yd = rng.normal(scale=2, size=n)
    return float(np.max(np.abs(qp_du_int(t, Y) + qp_du_ent(t, Y, Yd) - qp_du(t, Y, Yd))))


def pp_quadrature_residuals(lam=1.0, t=1.0, L=14.0, n=512) -> tuple[float, float]:
    """(|integral of the slice rate|, |integral of u * rate - closed-form rate|)."""
    f = pp_f(t, lam)
    scale = np.sqrt(f)
    g = np.linspace(-L * scale, L * scale, n, endpoint=False)
    h = g[1] - g[0]
    X, Y = np.meshgrid(g, g, indexing="ij")
    s = pp_slice_rate(X, Y, t, lam)
    total = s.sum() * h * h
    avg = (pp_u_of_y(t, Y, lam) * s).sum() * h * h
    return float(abs(total)), float(abs(avg - pp_avg_ent_rate(t, lam)))


def oracle_suite(preset: str, params: dict | None = None) -> dict[str, tuple[float, float]]:
    """Named residuals with tolerances for one preset's oracle family."""
    params = params or {}
    if preset == "quadratic_pair":
        return {
            "schrodinger_residual": (qp_schrodinger_residual(), 1e-6),
            "trajectory_velocity_residual": (qp_trajectory_velocity_residual(), 1e-6),
            "flow_identity_residual": (qp_algebraic_residual(), 1e-12),
        }
    if preset == "pp_coupling":
        lam = float(params.get("lambda", 1.0))
        out = {"schrodinger_residual": (pp_schrodinger_residual(lam), 1e-6)}
        for t in (0.5 / lam, 1.0 / lam, 2.0 / lam):
            zero, rate = pp_quadrature_residuals(lam, t)
            out[f"slice_rate_integral_t{t:g}"] = (zero, 1e-10)
            out[f"ent_rate_quadrature_t{t:g}"] = (rate, 1e-6)
        return out
    if preset == "spin_steering":
        oracle = SpinSteeringOracle(**{k: float(v) for k, v in params.items()
                                       if k in ("sigma_x", "sigma_y", "k", "v", "m")})
        return {"continuity_residual": (ss_continuity_residual(oracle), 1e-6)}
    return {}
