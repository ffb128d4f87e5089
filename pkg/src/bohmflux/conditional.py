"""Conditional wave functions, conditional energy and its flow decomposition.

Everything is evaluated in slice form: an operator is applied to the full joint
state on the grid and the result is restricted to the environment position
``y = Y`` with the same periodic quintic spline in ``y`` used for the slice
itself.  Because the spline acts column-wise, x-only operators such as H_S
commute exactly with slicing.

Rates (hbar = 1), with ``w = <phi|phi>`` and ``u = <phi|H_S phi>/w``::

    du_ext = <phi| dH_S/dt |phi> / w
    du_int = 2 Im(<H_S phi|chi_int> - u <phi|chi_int>) / w,   chi_int = (H_int Psi)(., Y)
    du_ent = 2 Im[(<H_S phi|chi_E> - u <phi|chi_E>) - v_y (<H_S phi|chi_P> - u <phi|chi_P>)] / w

with ``chi_E = (H_E Psi)(., Y)`` and ``chi_P = (P_Y Psi)(., Y)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import savgol_filter

from .errors import ConfigurationError, DegenerateSliceError, OutOfDomainError
from .grid import SLICE_ORDER, Grid, JointWaveFunction, y_spline_coefficients, y_stencil
from .hamiltonian import AppliedParts, HamiltonianSpec, apply_parts, apply_system_hamiltonian
from .trajectories import NODE_THRESHOLD, SnapshotFields, _moments, _velocity

CLOSURE_TOLERANCE = 5e-4


@dataclass(frozen=True, eq=False)
class ConditionalState:
    """Unnormalized conditional wave function ``phi(x) = Psi(x, Y)`` per spin component."""

    grid: Grid
    amplitudes: np.ndarray     # (spin, Nx)
    weight: float
    time: float
    y: float
    source: int | None = None

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def normalized(self) -> np.ndarray:
        return self.amplitudes / np.sqrt(self.weight)


def _check_y(grid: Grid, Y) -> np.ndarray:
    Y = np.atleast_1d(np.asarray(Y, dtype=float))
    L = grid.extent[1]
    if np.any((Y < -L) | (Y >= L)):
        raise OutOfDomainError(f"environment position outside [-{L}, {L})")
    return Y


def _slice(coeffs: np.ndarray, grid: Grid, Y: float) -> np.ndarray:
    """Spline value of a ``(spin, Nx, Ny)`` coefficient array at ``y = Y``."""
    idx, w = y_stencil(grid, Y, SLICE_ORDER)
    return np.einsum("sxk,k->sx", coeffs[:, :, idx[0]], w[0])


def _column_weights(psi: JointWaveFunction) -> np.ndarray:
    return psi.density_values.sum(axis=0) * psi.grid.dx


def extract_cwf(psi: JointWaveFunction, Y: float, source: int | None = None) -> ConditionalState:
    Y = float(_check_y(psi.grid, Y)[0])
    amps = _slice(psi.y_coefficients, psi.grid, Y)
    weight = float(np.sum(np.abs(amps) ** 2) * psi.grid.dx)
    if not weight > NODE_THRESHOLD * _column_weights(psi).max():
        raise DegenerateSliceError(f"slice at Y={Y} carries weight {weight:.3e}")
    amps.flags.writeable = False
    return ConditionalState(psi.grid, amps, weight, psi.time, Y, source)


def conditional_energy(cstate: ConditionalState, spec: HamiltonianSpec,
                       t: float | None = None) -> float:
    h = apply_system_hamiltonian(spec, cstate, t)
    num = np.sum(np.conj(cstate.amplitudes) * h).real * cstate.grid.dx
    return float(num / cstate.weight)


# ---------------------------------------------------------------------------
# Flow terms: direct slicing


def _as_fields(psi, spec) -> tuple[JointWaveFunction, AppliedParts]:
    if isinstance(psi, SnapshotFields):
        return psi.psi, psi.parts
    return psi, apply_parts(spec, psi.grid, psi.amplitudes, psi.time)


def _slice_products(psi: JointWaveFunction, parts: AppliedParts, Y: float) -> dict:
    """Inner products over x and spin of the slices needed by the rates."""
    g = psi.grid
    Y = float(_check_y(g, Y)[0])
    sl = {name: _slice(y_spline_coefficients(arr), g, Y) for name, arr in (
        ("F", psi.amplitudes), ("S", parts.system), ("D", parts.system_dt),
        ("I", parts.interaction), ("E", parts.env), ("P", parts.py))}

    def ip(a, b):
        return complex(np.sum(np.conj(sl[a]) * sl[b]) * g.dx)

    return {a + b: ip(a, b) for a, b in _PAIRS}


_PAIRS = (("F", "F"), ("F", "S"), ("F", "D"), ("S", "I"), ("F", "I"),
          ("S", "E"), ("F", "E"), ("S", "P"), ("F", "P"))


def _rates(g: dict, v_y, u=None):
    """Combine inner products (scalars or arrays) into ``(u, ext, int, ent, w)``."""
    w = g["FF"].real
    if u is None:
        u = g["FS"].real / w
    ext = g["FD"].real / w
    du_int = 2 * np.imag(g["SI"] - u * g["FI"]) / w
    du_ent = 2 * np.imag((g["SE"] - u * g["FE"]) - v_y * (g["SP"] - u * g["FP"])) / w
    return u, ext, du_int, du_ent, w


def flow_terms(psi, Y: float, v_y: float, spec: HamiltonianSpec, t: float | None = None,
               u: float | None = None) -> tuple[float, float, float]:
    """``(du_ext, du_int, du_ent)`` on the slice ``y = Y`` with environment velocity ``v_y``.

    ``psi`` may be a JointWaveFunction or precomputed SnapshotFields; ``t`` must
    match the snapshot time when given.
    """
    state, parts = _as_fields(psi, spec)
    if t is not None and abs(t - state.time) > 1e-12:
        raise ConfigurationError("flow terms are evaluated at the snapshot time")
    g = _slice_products(state, parts, Y)
    if not g["FF"].real > NODE_THRESHOLD * _column_weights(state).max():
        raise DegenerateSliceError(f"slice at Y={Y} carries no weight")
    _, ext, du_int, du_ent, _ = _rates(g, v_y, u)
    return float(ext), float(du_int), float(du_ent)


# ---------------------------------------------------------------------------
# Flow terms: batched over many slices


class SliceProjector:
    """Rates for many environment positions of one snapshot at once.

    For y-spline coefficient arrays ``A``, ``B`` the banded Gram sums
    ``G[d][j] = sum_{s,x} conj(A[s,x,j]) B[s,x,j+d]`` (``|d|`` up to the spline
    order) reduce every slice inner product to ``(order + 1)^2`` weighted lookups.
    """

    def __init__(self, fields: SnapshotFields):
        self.fields = fields
        self.grid = fields.grid

    @cached_property
    def _grams(self) -> dict:
        p = self.fields.parts
        arrays = {"F": self.fields.psi.amplitudes, "S": p.system, "D": p.system_dt,
                  "I": p.interaction, "E": p.env, "P": p.py}
        coeffs = {k: y_spline_coefficients(v) for k, v in arrays.items()}
        n = SLICE_ORDER
        ny = self.grid.points[1]
        out = {}
        for a, b in _PAIRS:
            ca = np.conj(coeffs[a])
            cb = np.concatenate([coeffs[b][..., ny - n:], coeffs[b], coeffs[b][..., :n]], axis=-1)
            out[a + b] = np.stack([np.einsum("sxj,sxj->j", ca, cb[..., n + d:n + d + ny])
                                   for d in range(-n, n + 1)])
        return out

    def products(self, Y) -> dict:
        Y = _check_y(self.grid, Y)
        n = SLICE_ORDER
        idx, w = y_stencil(self.grid, Y, n)
        pairs = [(k, l) for k in range(n + 1) for l in range(n + 1)]
        ww = np.stack([w[:, k] * w[:, l] for k, l in pairs])
        out = {}
        for key, G in self._grams.items():
            vals = np.stack([G[l - k + n][idx[:, k]] for k, l in pairs])
            out[key] = np.einsum("pn,pn->n", ww, vals) * self.grid.dx
        return out

    def rates(self, Y, v_y) -> dict:
        """Arrays ``u, du_ext, du_int, du_ent, weight`` for positions ``Y``."""
        u, ext, du_int, du_ent, w = _rates(self.products(Y), np.asarray(v_y, dtype=float))
        return {"u": u, "du_ext": ext, "du_int": du_int, "du_ent": du_ent, "weight": w}


# ---------------------------------------------------------------------------
# Ledger


@dataclass
class EnergyLedger:
    """Time series of one trajectory ``(T,)`` or of an ensemble ``(n, T)``."""

    times: np.ndarray
    u: np.ndarray
    du_ext: np.ndarray
    du_int: np.ndarray
    du_ent: np.ndarray
    cum_ext: np.ndarray
    cum_int: np.ndarray
    cum_ent: np.ndarray
    du_total_check: np.ndarray
    closure_residual: np.ndarray
    tolerance: float = CLOSURE_TOLERANCE

    @property
    def closure_ok(self) -> np.ndarray:
        return np.abs(self.closure_residual) <= self.tolerance * (1 + np.abs(self.du_total_check))

    @property
    def flagged(self):
        """True for series whose closure fails somewhere."""
        return ~np.all(self.closure_ok, axis=-1)

    @property
    def delta_u(self) -> np.ndarray:
        return self.u - self.u[..., :1]

    def select(self, rows) -> "EnergyLedger":
        kw = {k: getattr(self, k)[rows] for k in _SERIES}
        return EnergyLedger(times=self.times, tolerance=self.tolerance, **kw)


_SERIES = ("u", "du_ext", "du_int", "du_ent", "cum_ext", "cum_int", "cum_ent",
           "du_total_check", "closure_residual")


def time_derivative(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Fourth-order five-point finite differences along the last axis.

    The degree-4 Savitzky-Golay fit over five points is the interpolating
    polynomial, so this is the standard central stencil inside and the
    one-sided stencils at the two ends.  Short series fall back to lower order.
    """
    n = times.size
    if n >= 5:
        return savgol_filter(values, 5, 4, deriv=1, delta=times[1] - times[0],
                             axis=-1, mode="interp")
    if n >= 3:
        return np.gradient(values, times, axis=-1, edge_order=2)
    if n == 2:
        return np.gradient(values, times, axis=-1)
    return np.zeros_like(values)


def accumulate_ledger(times, u, du_ext, du_int, du_ent,
                      tolerance: float = CLOSURE_TOLERANCE) -> EnergyLedger:
    """Trapezoid cumulative integrals and the finite-difference closure check."""
    times = np.asarray(times, dtype=float)
    series = [np.asarray(a, dtype=float) for a in (u, du_ext, du_int, du_ent)]
    if times.ndim != 1 or any(a.shape[-1] != times.size for a in series):
        raise ConfigurationError("ledger series must share the time axis")
    if times.size > 2:
        steps = np.diff(times)
        if np.ptp(steps) > 1e-9 * max(abs(steps).max(), 1.0):
            raise ConfigurationError("ledger needs a uniform time grid")
    u, du_ext, du_int, du_ent = series
    cums = [cumulative_trapezoid(a, times, axis=-1, initial=0) if times.size > 1
            else np.zeros_like(a) for a in (du_ext, du_int, du_ent)]
    du_fd = time_derivative(u, times)
    res = du_ext + du_int + du_ent - du_fd
    return EnergyLedger(times, u, du_ext, du_int, du_ent, *cums, du_fd, res, tolerance)


LEDGER_HEADER = ("sample_id,t,u,du_ext,du_int,du_ent,cum_ext,cum_int,cum_ent,"
                 "closure_residual")


def write_ledger_csv(ledger: EnergyLedger, sample_ids: Sequence[int], path) -> None:
    T = ledger.times.size
    n = len(sample_ids)
    cols = [np.repeat(np.asarray(sample_ids, dtype=float), T), np.tile(ledger.times, n)]
    for name in ("u", "du_ext", "du_int", "du_ent", "cum_ext", "cum_int", "cum_ent",
                 "closure_residual"):
        cols.append(np.asarray(getattr(ledger, name))[:n].reshape(-1))
    np.savetxt(path, np.column_stack(cols), fmt=["%d"] + ["%.17g"] * 9, delimiter=",",
               header=LEDGER_HEADER, comments="")


class LedgerObserver:
    """Collects the rates along an ensemble while trajectories are integrated."""

    def __init__(self):
        self.rows: list[dict] = []

    def __call__(self, fields, positions, velocities, index, active):
        n = len(positions)
        rec = {k: np.full(n, np.nan) for k in ("u", "du_ext", "du_int", "du_ent", "weight")}
        if active.any():
            r = SliceProjector(fields).rates(positions[active, 1], velocities[active, 1])
            for k, v in r.items():
                rec[k][active] = v
        rec["time"] = fields.time
        self.rows.append(rec)

    def ledger(self, tolerance: float = CLOSURE_TOLERANCE) -> EnergyLedger:
        times = np.array([r["time"] for r in self.rows])
        get = lambda k: np.stack([r[k] for r in self.rows], axis=-1)  # noqa: E731
        return accumulate_ledger(times, get("u"), get("du_ext"), get("du_int"),
                                 get("du_ent"), tolerance)


# ---------------------------------------------------------------------------
# Mixed states


@dataclass(frozen=True)
class MixedState:
    """Finite convex mixture ``sigma = sum_k p_k |Psi_k><Psi_k|``."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(p), psi) for p, psi in self.components)
        if not comps:
            raise ConfigurationError("a mixture needs at least one component")
        if len(comps) > 16:
            raise ConfigurationError("mixtures are limited to rank 16")
        if any(p <= 0 for p, _ in comps):
            raise ConfigurationError("mixture probabilities must be positive")
        if abs(sum(p for p, _ in comps) - 1) > 1e-12:
            raise ConfigurationError("mixture probabilities must sum to one")
        grids = {psi.grid for _, psi in comps}
        if len(grids) != 1:
            raise ConfigurationError("mixture components must share a grid")
        object.__setattr__(self, "components", comps)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for p, _ in self.components])

    @property
    def grid(self) -> Grid:
        return self.components[0][1].grid

    @property
    def time(self) -> float:
        return self.components[0][1].time


def mixed_velocity_field(mixed: MixedState, point, spec: HamiltonianSpec | None = None,
                         dt: float = 1e-3) -> tuple[float, float]:
    x, y = point
    if not bool(mixed.grid.contains(x, y)):
        raise OutOfDomainError(f"point {point} lies outside the grid domain")
    pts = np.array([[x, y]], dtype=float)
    acc = None
    peak = 0.0
    fields = None
    for p, psi in mixed.components:
        fields = SnapshotFields(psi, spec)
        m = _moments(*fields.values(pts[:, 0], pts[:, 1]))
        m = tuple(p * a for a in m)
        acc = m if acc is None else tuple(a + b for a, b in zip(acc, m))
        peak += p * fields.peak_density
    cap = min(mixed.grid.extent) / (10 * dt)
    v, _ = _velocity(*acc, fields.spec.velocity_matrix(),
                     fields.spec.drive_speed(mixed.time), peak, cap)
    return float(v[0, 0]), float(v[0, 1])


def _mixed_products(mixed: MixedState, Y: float, spec: HamiltonianSpec) -> dict:
    acc = None
    for p, psi in mixed.components:
        g = _slice_products(*_as_fields(psi, spec), Y)
        g = {k: p * v for k, v in g.items()}
        acc = g if acc is None else {k: acc[k] + g[k] for k in acc}
    return acc


def mixed_conditional_energy(mixed: MixedState, Y: float, spec: HamiltonianSpec,
                             t: float | None = None) -> float:
    """``sum_k p_k <phi_k|H_S|phi_k> / sum_k p_k <phi_k|phi_k>`` on the slice ``Y``."""
    num = 0.0
    den = 0.0
    for p, psi in mixed.components:
        c = extract_cwf_unchecked(psi, Y)
        h = apply_system_hamiltonian(spec, c, t)
        num += p * np.sum(np.conj(c.amplitudes) * h).real * c.grid.dx
        den += p * c.weight
    peak = max(_column_weights(psi).max() for _, psi in mixed.components)
    if not den > NODE_THRESHOLD * peak:
        raise DegenerateSliceError(f"mixed slice at Y={Y} carries no weight")
    return float(num / den)


def mixed_flow_terms(mixed: MixedState, Y: float, v_y: float, spec: HamiltonianSpec,
                     t: float | None = None, u: float | None = None) -> tuple[float, float, float]:
    """``(du_ext, du_int, du_cor)``; the third term generalizes the entanglement
    contribution and also picks up classical correlations."""
    g = _mixed_products(mixed, Y, spec)
    peak = max(_column_weights(psi).max() for _, psi in mixed.components)
    if not g["FF"].real > NODE_THRESHOLD * peak:
        raise DegenerateSliceError(f"mixed slice at Y={Y} carries no weight")
    _, ext, du_int, du_cor, _ = _rates(g, v_y, u)
    return float(ext), float(du_int), float(du_cor)


def extract_cwf_unchecked(psi: JointWaveFunction, Y: float) -> ConditionalState:
    """Slice without the degeneracy check (mixture components may vanish there)."""
    Y = float(_check_y(psi.grid, Y)[0])
    amps = _slice(psi.y_coefficients, psi.grid, Y)
    weight = float(np.sum(np.abs(amps) ** 2) * psi.grid.dx)
    return ConditionalState(psi.grid, amps, weight, psi.time, Y)
