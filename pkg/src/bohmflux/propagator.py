"""Strang split-operator propagation of the joint wave function.

The kinetic step (including any -lambda P_X P_Y coupling and the spin-conditioned
displacement drive) is diagonal in momentum space and applied exactly; positional
potentials are applied as half steps evaluated at the step midpoint.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import scipy.fft as sfft

from .errors import BoundaryError, ConfigurationError, NormDriftError
from .grid import Y_SPIN_UP, Grid, JointWaveFunction
from .hamiltonian import HamiltonianSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PropagationPlan:
    dt: float
    t_final: float
    snapshot_stride: int = 1
    splitting_order: str = "strang"
    exact_momentum_coupling: bool = True
    norm_abort: float = 1e-6
    boundary_tolerance: float = 1e-10

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.t_final < 0:
            raise ConfigurationError("t_final must be non-negative")
        if self.snapshot_stride < 1:
            raise ConfigurationError("snapshot_stride must be >= 1")
        if self.splitting_order != "strang":
            raise ConfigurationError("only Strang splitting is implemented")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-6:
            raise ConfigurationError("t_final must be an integer multiple of dt")
        if round(steps) % self.snapshot_stride:
            raise ConfigurationError("number of steps must be a multiple of snapshot_stride")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def snapshot_dt(self) -> float:
        return self.dt * self.snapshot_stride

    @property
    def snapshot_times(self) -> np.ndarray:
        n = self.n_steps // self.snapshot_stride
        return self.snapshot_dt * np.arange(n + 1)


class Propagator:
    """Stateful stepping engine with cached phase factors."""

    def __init__(self, spec: HamiltonianSpec, grid: Grid, dt: float):
        self.spec = spec
        self.grid = grid
        self.dt = dt
        kx = grid.kx[:, None]
        ky = grid.ky[None, :]
        self._ky = ky
        self._kinetic = np.exp(-1j * spec.kinetic_symbol(kx, ky) * dt)
        self._half_potential = None
        if spec.static_potential:
            self._half_potential = self._potential_phase(0.0)

    def _potential_phase(self, t_mid: float) -> np.ndarray:
        return np.exp(-0.5j * self.spec.potential(self.grid, t_mid) * self.dt)

    def step(self, amps: np.ndarray, t: float) -> np.ndarray:
        half = self._half_potential
        if half is None:
            half = self._potential_phase(t + 0.5 * self.dt)
        out = sfft.fft2(amps * half, axes=(-2, -1))
        out *= self._kinetic
        drive = self.spec.spin_drive
        if drive is not None and amps.shape[0] == 4:
            shift = drive.displacement(t, t + self.dt)
            if shift:
                phase = np.exp(-1j * shift * self._ky)
                for s in Y_SPIN_UP:
                    out[s] *= phase
        out = sfft.ifft2(out, axes=(-2, -1))
        out *= half
        return out


def step(psi: JointWaveFunction, spec: HamiltonianSpec, t: float | None = None,
         dt: float = 1e-3) -> JointWaveFunction:
    """Advance by one Strang step from time ``t`` (defaults to ``psi.time``)."""
    t = psi.time if t is None else t
    prop = Propagator(spec, psi.grid, dt)
    return psi.evolved(prop.step(psi.amplitudes, t), t + dt)


def _y_moments(grid: Grid, dens: np.ndarray) -> tuple[float, float]:
    marg = dens.sum(axis=0)
    total = marg.sum()
    mean = float((grid.y * marg).sum() / total)
    var = float(((grid.y - mean) ** 2 * marg).sum() / total)
    return mean, np.sqrt(var)


def apply_spin_drive(psi: JointWaveFunction, v: float, tau: float) -> JointWaveFunction:
    """Exact exp(-i v tau P_Y) on the Y-spin-up components; other components untouched."""
    if psi.spin_components != 4:
        raise ConfigurationError("the spin drive needs a four-component state")
    shift = v * tau
    if shift == 0:
        return psi
    up = np.abs(psi.amplitudes[list(Y_SPIN_UP)]) ** 2
    mean, std = _y_moments(psi.grid, up.sum(axis=0))
    if abs(mean + shift) + 6 * std > psi.grid.extent[1]:
        raise ConfigurationError(
            f"displacement {shift} would push the packet within 6 std of the boundary")
    amps = np.array(psi.amplitudes)
    up = list(Y_SPIN_UP)
    phase = np.exp(-1j * shift * psi.grid.ky)
    amps[up] = sfft.ifft(sfft.fft(amps[up], axis=-1) * phase, axis=-1)
    return psi.evolved(amps, psi.time)


def boundary_density(psi: JointWaveFunction, width: int = 2) -> float:
    """Largest density in the outer ``width`` rows/columns relative to the peak."""
    dens = psi.density_values
    edge = max(dens[:width].max(), dens[-width:].max(),
               dens[:, :width].max(), dens[:, -width:].max())
    return float(edge / dens.max())


def check_horizon(psi0: JointWaveFunction, spec: HamiltonianSpec, plan: PropagationPlan) -> None:
    """Reject plans whose unconfined spreading would reach the box edge.

    Only applies when the dynamics has no positional potential: the position
    spread is bounded by ``sigma_0 + t sigma_v`` with ``v = M p``.
    """
    V = spec.potential(psi0.grid, 0.0)
    if np.any(V != 0):
        return
    grid = psi0.grid
    ph = sfft.fft2(psi0.amplitudes, axes=(-2, -1))
    pdens = np.sum(np.abs(ph) ** 2, axis=0)
    pdens /= pdens.sum()
    KX, KY = np.meshgrid(grid.kx, grid.ky, indexing="ij")
    M = spec.velocity_matrix()
    dens = psi0.density_values / psi0.density_values.sum()
    X, Y = grid.mesh()
    for axis, (coord, L) in enumerate(zip((X, Y), grid.extent)):
        vel = M[axis, 0] * KX + M[axis, 1] * KY
        sv = np.sqrt(max((pdens * vel ** 2).sum() - (pdens * vel).sum() ** 2, 0.0))
        mean = (dens * coord).sum()
        sx = np.sqrt((dens * (coord - mean) ** 2).sum())
        drift = (pdens * vel).sum() * plan.t_final
        if axis == 1 and spec.spin_drive is not None:
            drift += abs(spec.spin_drive.displacement(0.0, plan.t_final))
        reach = abs(mean) + abs(drift) + 6 * (sx + plan.t_final * sv)
        if reach > L:
            raise ConfigurationError(
                f"horizon t={plan.t_final} too long: support reaches {reach:.2f} > L={L} "
                f"on axis {'xy'[axis]}")


def evolve(psi0: JointWaveFunction, spec: HamiltonianSpec,
           plan: PropagationPlan) -> Iterator[JointWaveFunction]:
    """Yield snapshots at every ``snapshot_stride`` steps, starting with ``psi0``."""
    check_horizon(psi0, spec, plan)
    prop = Propagator(spec, psi0.grid, plan.dt)
    norm0 = psi0.norm_squared()
    amps = np.array(psi0.amplitudes)
    t0 = psi0.time
    yield psi0
    for n in range(plan.n_steps):
        t = t0 + n * plan.dt
        amps = prop.step(amps, t)
        if (n + 1) % plan.snapshot_stride == 0:
            snap = psi0.evolved(amps.copy(), t0 + (n + 1) * plan.dt)
            drift = abs(snap.norm_squared() - norm0)
            if drift > plan.norm_abort:
                raise NormDriftError(
                    f"norm drift {drift:.3e} at t={snap.time:.4f} exceeds {plan.norm_abort:.1e}")
            edge = boundary_density(snap)
            if edge > plan.boundary_tolerance:
                raise BoundaryError(
                    f"relative boundary density {edge:.3e} at t={snap.time:.4f} "
                    f"exceeds {plan.boundary_tolerance:.1e}; enlarge the grid extent")
            yield snap
