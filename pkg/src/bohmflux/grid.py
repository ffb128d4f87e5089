"""Joint wave functions on a uniform periodic two-particle grid.

Axis 0 of the configuration space is the system coordinate ``x``, axis 1 the
environment coordinate ``y``.  Amplitude arrays are always stored as
``(spin, Nx, Ny)`` so that scalar and four-component spinor states share one
code path.  Units are hbar = m = 1 unless a mass is given explicitly.
"""
from __future__ import annotations

import json
import struct
from math import comb, factorial
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from .errors import ConfigurationError, OutOfDomainError

# Spinor basis, labelled (Y spin, X spin): {up-up, down-down, up-down, down-up}.
SPIN_BASIS = ("up_up", "down_down", "up_down", "down_up")
# Components whose environment (Y) spin is up; the spin drive acts on these.
Y_SPIN_UP = (0, 2)

NORM_TOLERANCE = 1e-9


def _pair(value, cast):
    if np.ndim(value) == 0:
        return (cast(value), cast(value))
    a, b = value
    return (cast(a), cast(b))


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid spanning ``[-L, L)`` on each axis."""

    points: tuple[int, int]
    extent: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "points", _pair(self.points, int))
        object.__setattr__(self, "extent", _pair(self.extent, float))
        for n in self.points:
            if n < 16 or n & (n - 1):
                raise ConfigurationError(
                    f"points per axis must be a power of two >= 16, got {n}")
        for L in self.extent:
            if not L > 0:
                raise ConfigurationError(f"extent must be positive, got {L}")

    @property
    def spacing(self) -> tuple[float, float]:
        return tuple(2.0 * L / n for n, L in zip(self.points, self.extent))

    @property
    def dx(self) -> float:
        return self.spacing[0]

    @property
    def dy(self) -> float:
        return self.spacing[1]

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @cached_property
    def x(self) -> np.ndarray:
        return -self.extent[0] + self.dx * np.arange(self.points[0])

    @cached_property
    def y(self) -> np.ndarray:
        return -self.extent[1] + self.dy * np.arange(self.points[1])

    @cached_property
    def kx(self) -> np.ndarray:
        return 2 * np.pi * sfft.fftfreq(self.points[0], d=self.dx)

    @cached_property
    def ky(self) -> np.ndarray:
        return 2 * np.pi * sfft.fftfreq(self.points[1], d=self.dy)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def contains(self, x, y) -> np.ndarray:
        (Lx, Ly) = self.extent
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= -Lx) & (x < Lx) & (y >= -Ly) & (y < Ly)

    def fractional_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        return ((np.asarray(x) + self.extent[0]) / self.dx,
                (np.asarray(y) + self.extent[1]) / self.dy)

    def to_dict(self) -> dict:
        return {"points": list(self.points), "extent": list(self.extent)}


class SpectralOps:
    """FFT derivatives on the last two (x, y) axes of an amplitude array.

    Odd derivative orders drop the Nyquist mode, which has no well defined
    derivative on a periodic grid.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self._kx = grid.kx[:, None]
        self._ky = grid.ky[None, :]

    @staticmethod
    def _factor(k: np.ndarray, n: int) -> np.ndarray:
        fac = (1j * k) ** n
        if n % 2 == 1:
            fac = np.where(np.abs(k) == np.abs(k).max(), 0.0, fac)
        return fac

    def factor(self, nx: int = 0, ny: int = 0) -> np.ndarray:
        return self._factor(self._kx, nx) * self._factor(self._ky, ny)

    def derivative(self, amps: np.ndarray, nx: int = 0, ny: int = 0) -> np.ndarray:
        if nx == 0 and ny == 0:
            return np.array(amps, dtype=complex)
        spec = sfft.fft2(amps, axes=(-2, -1))
        return sfft.ifft2(spec * self.factor(nx, ny), axes=(-2, -1))

    def derivatives(self, amps: np.ndarray, orders: Sequence[tuple[int, int]]):
        """Several derivatives sharing one forward transform."""
        spec = sfft.fft2(amps, axes=(-2, -1))
        out = []
        for nx, ny in orders:
            if nx == 0 and ny == 0:
                out.append(np.array(amps, dtype=complex))
            else:
                out.append(sfft.ifft2(spec * self.factor(nx, ny), axes=(-2, -1)))
        return out

    def derivative_x(self, amps: np.ndarray, n: int) -> np.ndarray:
        """Derivative along a trailing x axis of a slice array ``(..., Nx)``."""
        fac = self._factor(self.grid.kx, n)
        return sfft.ifft(sfft.fft(amps, axis=-1) * fac, axis=-1)


class SplineField:
    """Periodic cubic B-spline interpolant of a complex ``(spin, Nx, Ny)`` array.

    Real and imaginary parts are interpolated separately; the interpolant is
    exact at grid nodes and continuously differentiable.
    """

    def __init__(self, grid: Grid, amps: np.ndarray):
        self.grid = grid
        amps = np.asarray(amps)
        self._re = [ndimage.spline_filter(a.real, order=3, mode="grid-wrap")
                    for a in amps]
        self._im = [ndimage.spline_filter(a.imag, order=3, mode="grid-wrap")
                    for a in amps]

    def __call__(self, xs, ys) -> np.ndarray:
        """Values at points; returns ``(spin, n)``."""
        ix, iy = self.grid.fractional_index(np.atleast_1d(xs), np.atleast_1d(ys))
        coords = np.vstack([ix.ravel(), iy.ravel()])
        out = np.empty((len(self._re), coords.shape[1]), dtype=complex)
        for s, (cr, ci) in enumerate(zip(self._re, self._im)):
            out[s].real = ndimage.map_coordinates(
                cr, coords, order=3, mode="grid-wrap", prefilter=False)
            out[s].imag = ndimage.map_coordinates(
                ci, coords, order=3, mode="grid-wrap", prefilter=False)
        return out


SLICE_ORDER = 5   # spline order along y for conditional slices


def bspline_weights(frac: np.ndarray, order: int = 3) -> np.ndarray:
    """Cardinal B-spline weights ``(n, order + 1)`` at offset ``frac`` from node ``j``.

    Columns belong to nodes ``j - (order - 1)/2 .. j + (order + 1)/2``.
    """
    if order % 2 == 0:
        raise ValueError("only odd spline orders are supported")
    t = np.asarray(frac, dtype=float)[..., None]
    offsets = np.arange(-(order - 1) // 2, (order + 1) // 2 + 1)
    x = t - offsets
    half = (order + 1) / 2
    acc = np.zeros_like(x)
    for k in range(order + 2):
        acc += (-1) ** k * comb(order + 1, k) * np.clip(x + half - k, 0.0, None) ** order
    return acc / factorial(order)


def y_spline_coefficients(amps: np.ndarray, order: int = SLICE_ORDER) -> np.ndarray:
    """Periodic B-spline coefficients along the y axis only."""
    re = ndimage.spline_filter1d(amps.real, order=order, axis=-1, mode="grid-wrap")
    im = ndimage.spline_filter1d(amps.imag, order=order, axis=-1, mode="grid-wrap")
    return re + 1j * im


def y_stencil(grid: Grid, Y, order: int = SLICE_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Node indices and weights, each ``(n, order + 1)``, of the y-spline at ``Y``."""
    s = (np.atleast_1d(np.asarray(Y, dtype=float)) + grid.extent[1]) / grid.dy
    j = np.floor(s).astype(int)
    w = bspline_weights(s - j, order)
    offsets = np.arange(-(order - 1) // 2, (order + 1) // 2 + 1)
    idx = (j[:, None] + offsets[None, :]) % grid.points[1]
    return idx, w


@dataclass(frozen=True, eq=False)
class JointWaveFunction:
    """Immutable snapshot of the joint system-environment wave function."""

    grid: Grid
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.ndim == 2:
            amps = amps[None]
        if amps.ndim != 3 or amps.shape[1:] != self.grid.points:
            raise ConfigurationError(
                f"amplitudes of shape {amps.shape} do not fit grid {self.grid.points}")
        if amps.shape[0] not in (1, 4):
            raise ConfigurationError("spin_components must be 1 or 4")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "time", float(self.time))

    @property
    def spin_components(self) -> int:
        return self.amplitudes.shape[0]

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.cell_area)

    def normalized(self) -> "JointWaveFunction":
        return self.evolved(self.amplitudes / np.sqrt(self.norm_squared()), self.time)

    def evolved(self, amps: np.ndarray, time: float) -> "JointWaveFunction":
        return JointWaveFunction(self.grid, amps, time)

    def inner(self, other: "JointWaveFunction") -> complex:
        return complex(np.sum(np.conj(self.amplitudes) * other.amplitudes)
                       * self.grid.cell_area)

    @cached_property
    def spline(self) -> SplineField:
        return SplineField(self.grid, self.amplitudes)

    @cached_property
    def y_coefficients(self) -> np.ndarray:
        """y-direction spline coefficients used for conditional slices."""
        return y_spline_coefficients(self.amplitudes)

    @cached_property
    def density_values(self) -> np.ndarray:
        vals = np.sum(np.abs(self.amplitudes) ** 2, axis=0)
        vals.flags.writeable = False
        return vals


@dataclass(frozen=True)
class Density:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def total(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)


def density(psi: JointWaveFunction) -> Density:
    """Spin-summed configuration-space density."""
    return Density(psi.grid, psi.density_values)


def spectral_gradient(psi: JointWaveFunction, axis: int) -> np.ndarray:
    """Partial derivative along ``axis`` (0 = x, 1 = y), shape ``(spin, Nx, Ny)``."""
    if axis not in (0, 1):
        raise ValueError("axis must be 0 (x) or 1 (y)")
    orders = (1, 0) if axis == 0 else (0, 1)
    return SpectralOps(psi.grid).derivative(psi.amplitudes, *orders)


def spectral_laplacian(psi: JointWaveFunction) -> np.ndarray:
    dxx, dyy = SpectralOps(psi.grid).derivatives(psi.amplitudes, [(2, 0), (0, 2)])
    return dxx + dyy


def interpolate(psi: JointWaveFunction, point) -> np.ndarray:
    """Amplitude of every spin component at an off-grid point."""
    x, y = point
    if not bool(psi.grid.contains(x, y)):
        raise OutOfDomainError(f"point {point} lies outside the grid domain")
    return psi.spline(x, y)[:, 0]


def fourier_tensor(psi: JointWaveFunction, xs, ys) -> np.ndarray:
    """Band-limited (trigonometric) interpolant on a tensor product of points,
    returning ``(spin, len(xs), len(ys))``."""
    g = psi.grid
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    spec = sfft.fft2(psi.amplitudes, axes=(-2, -1))
    ex = np.exp(1j * np.outer(xs + g.extent[0], g.kx)) / g.points[0]
    ey = np.exp(1j * np.outer(ys + g.extent[1], g.ky)) / g.points[1]
    return np.einsum("ak,skl,bl->sab", ex, spec, ey, optimize=True)


def gaussian_1d(coord: np.ndarray, sigma: float, center: float = 0.0) -> np.ndarray:
    """Real Gaussian amplitude whose square has standard deviation ``sigma``."""
    return (2 * np.pi * sigma ** 2) ** -0.25 * np.exp(-(coord - center) ** 2 / (4 * sigma ** 2))


def make_gaussian_product(grid: Grid, sigma_x: float, sigma_y: float,
                          k: float = 0.0, spin_preset: str = "scalar",
                          time: float = 0.0) -> JointWaveFunction:
    """Gaussian product state, scalar or the entangled spinor of the steering example.

    ``scalar`` gives ``f(x) g(y) exp(i k x)``; ``steering`` gives
    ``(g f e^{ikx}, g f, 0, 0) / sqrt(2)`` in :data:`SPIN_BASIS` order.
    """
    if not (sigma_x > 0 and sigma_y > 0):
        raise ConfigurationError("Gaussian widths must be positive")
    widest = max(sigma_x, sigma_y)
    if min(grid.extent) < 6 * widest:
        raise ConfigurationError(
            f"grid extent {grid.extent} is smaller than 6 x width {widest}; "
            "the Gaussian would be truncated")
    f = gaussian_1d(grid.x, sigma_x)
    g = gaussian_1d(grid.y, sigma_y)
    plane = np.exp(1j * k * grid.x)
    if spin_preset == "scalar":
        amps = ((f * plane)[:, None] * g[None, :])[None]
    elif spin_preset == "steering":
        amps = np.zeros((4,) + grid.points, dtype=complex)
        amps[0] = (f * plane)[:, None] * g[None, :] / np.sqrt(2)
        amps[1] = f[:, None] * g[None, :] / np.sqrt(2)
    else:
        raise ConfigurationError(f"unknown spin preset {spin_preset!r}")
    return JointWaveFunction(grid, amps, time).normalized()


# ---------------------------------------------------------------------------
# Snapshot container

_MAGIC = b"BFLXSNAP"
_VERSION = 1


def snapshot_metadata(psi: JointWaveFunction, byteorder: str = "<") -> dict:
    return {
        "format": "bohmflux-snapshot",
        "version": _VERSION,
        "points": list(psi.grid.points),
        "extent": list(psi.grid.extent),
        "spin_components": psi.spin_components,
        "time": psi.time,
        "endianness": "little" if byteorder == "<" else "big",
        "dtype": "complex128",
        "layout": "row-major (spin, x, y)",
    }


def save_snapshot(psi: JointWaveFunction, path, byteorder: str = "<") -> tuple[Path, Path]:
    """Write the binary container plus a JSON sidecar; returns both paths."""
    if byteorder not in ("<", ">"):
        raise ValueError("byteorder must be '<' or '>'")
    path = Path(path)
    header = _MAGIC + byteorder.encode() + struct.pack("B", _VERSION) + b"\0\0"
    header += struct.pack(byteorder + "IIII", *psi.grid.points, psi.spin_components, 0)
    header += struct.pack(byteorder + "ddd", *psi.grid.extent, psi.time)
    data = np.ascontiguousarray(psi.amplitudes, dtype=np.dtype(byteorder + "c16"))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(snapshot_metadata(psi, byteorder), indent=2) + "\n")
    return path, sidecar


def load_snapshot(path) -> JointWaveFunction:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a bohmflux snapshot")
    bo = raw[8:9].decode()
    nx, ny, spin, _ = struct.unpack(bo + "IIII", raw[12:28])
    lx, ly, time = struct.unpack(bo + "ddd", raw[28:52])
    amps = np.frombuffer(raw[52:], dtype=np.dtype(bo + "c16")).reshape(spin, nx, ny)
    return JointWaveFunction(Grid((nx, ny), (lx, ly)), amps.astype(complex), time)
