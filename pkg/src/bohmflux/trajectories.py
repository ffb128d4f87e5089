"""Born sampling, the guidance velocity field and RK4 trajectory ensembles.

The velocity is the probability current divided by the density,

    v = M Im(sum_s Psi_s^* grad Psi_s) / rho  (+ drive on Y-spin-up components),

with ``M`` the inverse-mass matrix of the kinetic form driving the dynamics
(``diag(1/m_x, 1/m_y)`` plus ``-lambda`` off the diagonal for momentum coupling).
For a scalar state with unit masses this is the familiar ``Im(grad Psi / Psi)``.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ExclusionQuotaError, OutOfDomainError
from .grid import Y_SPIN_UP, Grid, JointWaveFunction, SpectralOps, SplineField, fourier_tensor
from .hamiltonian import AppliedParts, HamiltonianSpec, apply_parts

log = logging.getLogger(__name__)

NODE_THRESHOLD = 1e-12      # relative to the snapshot's peak density
DOMAIN_MARGIN_CELLS = 4
EXCLUSION_QUOTA = 1e-3
_DEFAULT_SPEC = HamiltonianSpec()


@dataclass(frozen=True)
class InitialSample:
    z0: tuple[float, float]
    seed_path: tuple[int, int] | None = None   # (master seed, sample index)
    index: int = 0


@dataclass(frozen=True)
class Trajectory:
    sample_id: int
    times: np.ndarray
    positions: np.ndarray     # (T, 2)
    velocities: np.ndarray    # (T, 2)


@dataclass
class TrajectorySet:
    """Ensemble of trajectories stored as dense ``(n, T, 2)`` arrays."""

    samples: list[InitialSample]
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray
    mode: str = "monte_carlo"
    excluded: np.ndarray | None = None
    capped_evaluations: int = 0
    field_evaluations: int = 0

    def __post_init__(self):
        if self.excluded is None:
            self.excluded = np.zeros(len(self.samples), dtype=bool)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def trajectories(self) -> list[Trajectory]:
        return [Trajectory(s.index, self.times, self.positions[i], self.velocities[i])
                for i, s in enumerate(self.samples)]

    @property
    def included(self) -> np.ndarray:
        return ~self.excluded

    def effective_weights(self) -> np.ndarray:
        """Weights with excluded trajectories removed, normalized to one."""
        w = np.where(self.excluded, 0.0, self.weights)
        return w / w.sum()

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no stored time matches t={t}")
        return i

    @property
    def capped_fraction(self) -> float:
        return self.capped_evaluations / max(self.field_evaluations, 1)


# ---------------------------------------------------------------------------
# Initial conditions


def sample_born(psi0: JointWaveFunction, n: int, master_seed: int) -> list[InitialSample]:
    """``n`` i.i.d. draws from the discrete Born density with uniform within-cell jitter.

    Sample ``i`` uses its own stream ``SeedSequence([master_seed, i])`` so any
    subset of the ensemble can be regenerated independently.
    """
    if n <= 0:
        raise ConfigurationError("number of samples must be positive")
    if master_seed < 0:
        raise ConfigurationError("master_seed must be non-negative")
    grid = psi0.grid
    cdf = np.cumsum(psi0.density_values.ravel())
    out = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, i]))
        u = rng.random(3)
        cell = min(int(np.searchsorted(cdf, u[0] * cdf[-1], side="right")), cdf.size - 1)
        ix, iy = divmod(cell, grid.points[1])
        z0 = (float(grid.x[ix] + (u[1] - 0.5) * grid.dx),
              float(grid.y[iy] + (u[2] - 0.5) * grid.dy))
        out.append(InitialSample(z0, (int(master_seed), i), i))
    return out


def quadrature_nodes(psi0: JointWaveFunction, resolution: int = 128,
                     threshold: float = 1e-11) -> tuple[list[InitialSample], np.ndarray]:
    """Midpoint nodes on a ``resolution^2`` box with Born weights ``|Psi|^2 * cell area``.

    Node densities use the band-limited interpolant, so the weights are exact
    point values of the discretized state.  The box covers the grid cells whose density exceeds ``threshold`` times the
    peak; nodes below the same relative threshold are dropped.
    """
    grid = psi0.grid
    dens = psi0.density_values
    peak = dens.max()
    ix, iy = np.nonzero(dens > threshold * peak)
    lo = (grid.x[ix.min()] - grid.dx / 2, grid.y[iy.min()] - grid.dy / 2)
    hi = (grid.x[ix.max()] + grid.dx / 2, grid.y[iy.max()] + grid.dy / 2)
    hx = (hi[0] - lo[0]) / resolution
    hy = (hi[1] - lo[1]) / resolution
    xs = lo[0] + hx * (np.arange(resolution) + 0.5)
    ys = lo[1] + hy * (np.arange(resolution) + 0.5)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = np.sum(np.abs(fourier_tensor(psi0, xs, ys)) ** 2, axis=0).ravel()
    keep = vals > threshold * peak
    weights = vals[keep] * hx * hy
    total = weights.sum() / psi0.norm_squared()
    if abs(total - 1) > 1e-6:
        raise ConfigurationError(
            f"quadrature weights sum to {total:.9f}; refine the resolution")
    pts = np.column_stack([X.ravel()[keep], Y.ravel()[keep]])
    samples = [InitialSample((float(x), float(y)), None, i) for i, (x, y) in enumerate(pts)]
    return samples, weights


# ---------------------------------------------------------------------------
# Velocity field


def _moments(vals: np.ndarray, dxv: np.ndarray, dyv: np.ndarray):
    """Density, current components and Y-spin-up density from ``(spin, n)`` values."""
    rho = np.sum(vals.real ** 2 + vals.imag ** 2, axis=0)
    jx = np.sum(np.imag(np.conj(vals) * dxv), axis=0)
    jy = np.sum(np.imag(np.conj(vals) * dyv), axis=0)
    if vals.shape[0] == 4:
        up = np.sum(np.abs(vals[list(Y_SPIN_UP)]) ** 2, axis=0)
    else:
        up = np.zeros_like(rho)
    return rho, jx, jy, up


def _velocity(rho, jx, jy, up, M, drive, peak, cap):
    """Guidance velocity with the node policy; returns ``(n, 2)`` and a node mask."""
    node = rho < NODE_THRESHOLD * peak
    safe = np.where(rho > 0, rho, 1.0)
    vx = (M[0, 0] * jx + M[0, 1] * jy) / safe
    vy = (M[1, 0] * jx + M[1, 1] * jy + drive * up) / safe
    v = np.stack([vx, vy], axis=-1)
    if node.any():
        vn = v[node]
        vn[~np.isfinite(vn)] = 0.0
        speed = np.linalg.norm(vn, axis=-1, keepdims=True)
        scale = np.where(speed > cap, cap / np.where(speed > 0, speed, 1.0), 1.0)
        v[node] = vn * scale
    return v, node


class SnapshotFields:
    """Derived quantities of one snapshot shared by trajectories and ledgers."""

    def __init__(self, psi: JointWaveFunction, spec: HamiltonianSpec | None = None,
                 ops: SpectralOps | None = None):
        self.psi = psi
        self.spec = spec or _DEFAULT_SPEC
        self.grid = psi.grid
        self.time = psi.time
        self._ops = ops or SpectralOps(psi.grid)
        self.peak_density = float(psi.density_values.max())

    @cached_property
    def parts(self) -> AppliedParts:
        return apply_parts(self.spec, self.grid, self.psi.amplitudes, self.time, self._ops)

    @cached_property
    def _spline(self) -> SplineField:
        p = self.parts
        return SplineField(self.grid, np.concatenate([self.psi.amplitudes, p.dx, p.dy]))

    def values(self, xs, ys) -> np.ndarray:
        """Interpolated ``(3, spin, n)``: Psi, d_x Psi, d_y Psi."""
        out = self._spline(xs, ys)
        return out.reshape(3, self.psi.spin_components, -1)

    @cached_property
    def _rate_spline(self) -> SplineField:
        p = self.parts
        total = p.interaction + p.env
        if self.spec.free_dynamics:
            total = total + p.system
        dot = -1j * total
        dx, dy = self._ops.derivatives(dot, [(1, 0), (0, 1)])
        return SplineField(self.grid, np.concatenate([dot, dx, dy]))

    def rates(self, xs, ys) -> np.ndarray:
        """Interpolated time derivatives ``(3, spin, n)`` of :meth:`values` (Psi_t = -i H Psi)."""
        out = self._rate_spline(xs, ys)
        return out.reshape(3, self.psi.spin_components, -1)

    def velocity(self, points: np.ndarray, drive: float | None = None,
                 cap: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
        if drive is None:
            drive = self.spec.drive_speed(self.time)
        vals = self.values(points[:, 0], points[:, 1])
        return _velocity(*_moments(*vals), self.spec.velocity_matrix(), drive,
                         self.peak_density, cap)


def velocity_field(psi: JointWaveFunction, point, spec: HamiltonianSpec | None = None,
                   dt: float = 1e-3) -> tuple[float, float]:
    """Guidance velocity ``(v_x, v_y)`` at an off-grid point."""
    x, y = point
    if not bool(psi.grid.contains(x, y)):
        raise OutOfDomainError(f"point {point} lies outside the grid domain")
    cap = min(psi.grid.extent) / (10 * dt)
    v, node = SnapshotFields(psi, spec).velocity(np.array([[x, y]], dtype=float), cap=cap)
    if node[0]:
        log.warning("velocity at %s capped: density below node threshold", point)
    return float(v[0, 0]), float(v[0, 1])


# ---------------------------------------------------------------------------
# Ensemble integration

Observer = Callable[["SnapshotFields", np.ndarray, np.ndarray, int, np.ndarray], None]


TIME_INTERPOLATION = ("linear", "hermite")


def _hermite(theta: float) -> tuple[float, float, float, float]:
    t2, t3 = theta * theta, theta * theta * theta
    return 2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + theta, -2 * t3 + 3 * t2, t3 - t2


class _Evaluator:
    """Velocity at blended times between two snapshots, optionally threaded.

    ``linear`` blends the interpolated values of the two snapshots; ``hermite``
    uses cubic Hermite blending with the Schroedinger rates at both ends, which
    keeps trajectories smooth across snapshot boundaries.
    """

    def __init__(self, threads: int, cap: float, interpolation: str = "linear"):
        self.threads = max(1, int(threads))
        self.cap = cap
        self.interpolation = interpolation
        self.pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        self.capped = 0
        self.calls = 0

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _chunks(self, fn, pts):
        if self.pool is None or len(pts) < 2 * self.threads:
            return fn(pts)
        parts = np.array_split(pts, self.threads)
        res = list(self.pool.map(fn, parts))
        return tuple(np.concatenate(r) for r in zip(*res))

    def __call__(self, a: SnapshotFields, b: SnapshotFields | None, theta: float,
                 pts: np.ndarray, drive: float) -> np.ndarray:
        def fn(p):
            xs, ys = p[:, 0], p[:, 1]
            if b is None or theta == 0:
                vals = a.values(xs, ys)
            elif theta == 1:
                vals = b.values(xs, ys)
            elif self.interpolation == "hermite":
                h = b.time - a.time
                c00, c10, c01, c11 = _hermite(theta)
                vals = (c00 * a.values(xs, ys) + c10 * h * a.rates(xs, ys)
                        + c01 * b.values(xs, ys) + c11 * h * b.rates(xs, ys))
            else:
                vals = (1 - theta) * a.values(xs, ys) + theta * b.values(xs, ys)
            return _velocity(*_moments(*vals), a.spec.velocity_matrix(), drive,
                             max(a.peak_density, b.peak_density if b else 0.0), self.cap)
        v, node = self._chunks(fn, pts)
        self.calls += len(pts)
        self.capped += int(node.sum())
        return v


def _inside(grid: Grid, pts: np.ndarray) -> np.ndarray:
    mx = grid.extent[0] - DOMAIN_MARGIN_CELLS * grid.dx
    my = grid.extent[1] - DOMAIN_MARGIN_CELLS * grid.dy
    return (np.abs(pts[:, 0]) <= mx) & (np.abs(pts[:, 1]) <= my)


def integrate_ensemble(snapshots: Iterable[JointWaveFunction], samples: Sequence[InitialSample],
                       spec: HamiltonianSpec | None = None, traj_dt: float | None = None,
                       observers: Sequence[Observer] = (), weights=None, threads: int = 1,
                       mode: str | None = None,
                       time_interpolation: str = "linear") -> TrajectorySet:
    """RK4 over consecutive snapshot pairs, fields blended in time.

    Positions and velocities are stored at the snapshot times.  ``traj_dt``
    defaults to the snapshot spacing and must divide it.  Each observer is called
    once per snapshot as ``observer(fields, positions, velocities, index, active)``.
    """
    if time_interpolation not in TIME_INTERPOLATION:
        raise ConfigurationError(f"time_interpolation must be one of {TIME_INTERPOLATION}")
    spec = spec or _DEFAULT_SPEC
    n = len(samples)
    if n == 0:
        raise ConfigurationError("empty ensemble")
    if weights is None:
        weights = np.full(n, 1.0 / n)
        mode = mode or "monte_carlo"
    else:
        weights = np.asarray(weights, dtype=float)
        mode = mode or "quadrature"
    z = np.array([s.z0 for s in samples], dtype=float)
    it = iter(snapshots)
    a = SnapshotFields(next(it), spec)
    grid = a.grid
    active = _inside(grid, z)
    if not active.all():
        raise ConfigurationError("initial configurations outside the domain margin")
    times, pos, vel = [a.time], [z.copy()], []
    evaluator = None
    cap = np.inf
    try:
        for k, snap in enumerate(it):
            b = SnapshotFields(snap, spec)
            h = b.time - a.time
            if evaluator is None:
                sub = 1 if traj_dt is None else h / traj_dt
                if abs(sub - round(sub)) > 1e-6 or round(sub) < 1:
                    raise ConfigurationError("traj_dt must divide the snapshot spacing")
                sub = int(round(sub))
                step = h / sub
                cap = min(grid.extent) / (10 * step)
                evaluator = _Evaluator(threads, cap, time_interpolation)
                v0 = evaluator(a, None, 0.0, z, spec.drive_speed(a.time))
                vel.append(v0)
                for obs in observers:
                    obs(a, z, v0, 0, active)
            drive = (spec.spin_drive.displacement(a.time, b.time) / h
                     if spec.spin_drive is not None else 0.0)
            zi = z[active]
            for m in range(sub):
                s0, s1 = m / sub, (m + 1) / sub
                sm = 0.5 * (s0 + s1)
                k1 = evaluator(a, b, s0, zi, drive)
                k2 = evaluator(a, b, sm, zi + 0.5 * step * k1, drive)
                k3 = evaluator(a, b, sm, zi + 0.5 * step * k2, drive)
                k4 = evaluator(a, b, s1, zi + step * k3, drive)
                zi = zi + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            z = z.copy()
            z[active] = zi
            left = active & ~_inside(grid, z)
            if left.any():
                log.warning("%d trajectories left the domain margin at t=%.4f",
                            int(left.sum()), b.time)
                active = active & ~left
                if (~active).sum() > EXCLUSION_QUOTA * n:
                    raise ExclusionQuotaError(
                        f"{int((~active).sum())} of {n} trajectories left the domain "
                        f"(quota {EXCLUSION_QUOTA:.1%})")
            z[~active] = np.nan
            v = np.full_like(z, np.nan)
            v[active] = evaluator(b, None, 0.0, z[active], spec.drive_speed(b.time))
            times.append(b.time)
            pos.append(z.copy())
            vel.append(v)
            for obs in observers:
                obs(b, z, v, k + 1, active)
            a = b
        if evaluator is None:   # single snapshot
            evaluator = _Evaluator(threads, cap, time_interpolation)
            v0 = evaluator(a, None, 0.0, z, spec.drive_speed(a.time))
            vel.append(v0)
            for obs in observers:
                obs(a, z, v0, 0, active)
    finally:
        if evaluator is not None:
            evaluator.close()
    traj = TrajectorySet(
        samples=list(samples), times=np.array(times),
        positions=np.stack(pos, axis=1), velocities=np.stack(vel, axis=1),
        weights=weights, mode=mode, excluded=~active,
        capped_evaluations=evaluator.capped, field_evaluations=evaluator.calls)
    if traj.capped_evaluations:
        log.info("capped velocity evaluations: %d of %d", traj.capped_evaluations,
                 traj.field_evaluations)
    return traj


# ---------------------------------------------------------------------------
# Equivariance


def _overlap_matrix(nodes: np.ndarray, spacing: float, edges: np.ndarray) -> np.ndarray:
    """Fraction of each grid cell ``[x - h/2, x + h/2)`` falling in each bin."""
    lo = nodes - spacing / 2
    hi = nodes + spacing / 2
    left = np.maximum(lo[None, :], edges[:-1, None])
    right = np.minimum(hi[None, :], edges[1:, None])
    return np.clip(right - left, 0.0, None) / spacing


def binned_density(psi: JointWaveFunction, edges_x: np.ndarray, edges_y: np.ndarray) -> np.ndarray:
    """Probability per bin, treating the density as uniform over each grid cell."""
    g = psi.grid
    wx = _overlap_matrix(g.x, g.dx, edges_x)
    wy = _overlap_matrix(g.y, g.dy, edges_y)
    return wx @ psi.density_values @ wy.T * g.cell_area / psi.norm_squared()


def support_edges(psi: JointWaveFunction, bins: int = 32, width: float = 4.0):
    """Bin edges spanning mean +- ``width`` standard deviations of each marginal."""
    g = psi.grid
    dens = psi.density_values
    out = []
    for coord, marg in ((g.x, dens.sum(axis=1)), (g.y, dens.sum(axis=0))):
        p = marg / marg.sum()
        mean = (coord * p).sum()
        std = np.sqrt(((coord - mean) ** 2 * p).sum())
        out.append(np.linspace(mean - width * std, mean + width * std, bins + 1))
    return tuple(out)


def equivariance_statistic(traj_set: TrajectorySet | np.ndarray, psi_at_t: JointWaveFunction,
                           weights=None, bins: int = 32, width: float = 4.0) -> float:
    """Total-variation distance (half the L1 norm) between the weighted histogram
    of trajectory positions and the binned density, over a 32x32 box of
    +-4 standard deviations plus one bin for everything outside."""
    if isinstance(traj_set, TrajectorySet):
        idx = traj_set.time_index(psi_at_t.time)
        pts = traj_set.positions[:, idx]
        w = traj_set.effective_weights() if weights is None else np.asarray(weights, float)
    else:
        pts = np.asarray(traj_set, dtype=float)
        w = np.full(len(pts), 1.0 / len(pts)) if weights is None else np.asarray(weights, float)
    keep = np.isfinite(pts).all(axis=1)
    pts, w = pts[keep], w[keep]
    w = w / w.sum()
    ex, ey = support_edges(psi_at_t, bins, width)
    hist, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=[ex, ey], weights=w)
    prob = binned_density(psi_at_t, ex, ey)
    outside = abs((1 - hist.sum()) - (1 - prob.sum()))
    return float(0.5 * (np.abs(hist - prob).sum() + outside))


# ---------------------------------------------------------------------------
# Output

TRAJECTORY_HEADER = "sample_id,t,x,y,vx,vy"


def write_trajectories_csv(traj_set: TrajectorySet, path, limit: int | None = None) -> Path:
    """One row per (sample, stored time), ordered by sample then time."""
    n = len(traj_set) if limit is None else min(limit, len(traj_set))
    T = len(traj_set.times)
    ids = np.repeat([s.index for s in traj_set.samples[:n]], T)
    t = np.tile(traj_set.times, n)
    p = traj_set.positions[:n].reshape(-1, 2)
    v = traj_set.velocities[:n].reshape(-1, 2)
    rows = np.column_stack([ids, t, p, v])
    path = Path(path)
    np.savetxt(path, rows, fmt=["%d"] + ["%.17g"] * 5, delimiter=",",
               header=TRAJECTORY_HEADER, comments="")
    return path


def trajectory_manifest(traj_set: TrajectorySet, master_seed: int | None = None,
                        written: int | None = None) -> dict:
    return {
        "mode": traj_set.mode,
        "master_seed": master_seed,
        "n_trajectories": len(traj_set),
        "n_written": len(traj_set) if written is None else written,
        "n_times": int(len(traj_set.times)),
        "excluded_ids": [s.index for s, e in zip(traj_set.samples, traj_set.excluded) if e],
        "capped_evaluations": traj_set.capped_evaluations,
        "field_evaluations": traj_set.field_evaluations,
    }


def write_trajectory_manifest(traj_set: TrajectorySet, path, **kw) -> Path:
    path = Path(path)
    path.write_text(json.dumps(trajectory_manifest(traj_set, **kw), indent=2) + "\n")
    return path
