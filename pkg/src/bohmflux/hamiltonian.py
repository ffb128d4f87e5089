"""Hamiltonians split as H(t) = H_S(t) + H_E + H_int.

Potentials are closed-form real expressions in ``x``, ``y`` and ``t`` written in a
small arithmetic grammar (``+ - * / ^``, ``exp``, ``sin``, ``cos``).  The split
between system, environment and interaction is always declared explicitly: the
energy-flow decomposition depends on where each term is assigned.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import sympy as sp

from .errors import ConfigurationError
from .grid import Y_SPIN_UP, Grid, SpectralOps

_X, _Y, _T = sp.symbols("x y t", real=True)
_SYMBOLS = {"x": _X, "y": _Y, "t": _T}
_FUNCTIONS = {"exp": sp.exp, "sin": sp.sin, "cos": sp.cos}
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Add, ast.Sub,
                  ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Call,
                  ast.Name, ast.Load, ast.Constant)


def _check_grammar(text: str) -> None:
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse potential {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigurationError(
                f"{type(node).__name__} is not allowed in potential {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigurationError(f"non-numeric constant in {text!r}")
        if isinstance(node, ast.Name) and node.id not in _SYMBOLS and node.id not in _FUNCTIONS:
            raise ConfigurationError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call):
            if (not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS
                    or len(node.args) != 1 or node.keywords):
                raise ConfigurationError(f"only exp/sin/cos of one argument in {text!r}")


class Potential:
    """Real potential ``V(x, y, t)`` given by a closed-form expression."""

    def __init__(self, expression="0"):
        if isinstance(expression, sp.Expr):
            self.expr = expression
        else:
            text = str(expression).replace("^", "**")
            _check_grammar(text)
            self.expr = sp.sympify(text, locals={**_SYMBOLS, **_FUNCTIONS})
        self._fn = sp.lambdify((_X, _Y, _T), self.expr, "numpy")

    def __repr__(self):
        return f"Potential({str(self.expr)!r})"

    def __eq__(self, other):
        return isinstance(other, Potential) and sp.simplify(self.expr - other.expr) == 0

    def __hash__(self):
        return hash(str(self.expr))

    @property
    def text(self) -> str:
        return str(self.expr).replace("**", "^")

    @property
    def variables(self) -> set[str]:
        return {s.name for s in self.expr.free_symbols}

    @property
    def is_zero(self) -> bool:
        return self.expr == 0

    @property
    def time_dependent(self) -> bool:
        return "t" in self.variables

    def __call__(self, x, y=0.0, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        return np.broadcast_to(np.asarray(self._fn(x, y, float(t)), dtype=float), shape).copy()

    def time_derivative(self) -> "Potential":
        return Potential(sp.diff(self.expr, _T))


ZERO = Potential("0")


@dataclass(frozen=True)
class SpinDrive:
    """Spin-conditioned displacement exp(-i v t P_Y |up_Y><up_Y|) active on [0, duration]."""

    speed: float
    duration: float

    def active(self, t: float) -> bool:
        return 0.0 <= t <= self.duration

    def displacement(self, t0: float, t1: float) -> float:
        overlap = max(0.0, min(t1, self.duration) - max(t0, 0.0))
        return self.speed * overlap


@dataclass(frozen=True)
class HamiltonianSpec:
    """Declarative Hamiltonian; immutable and shareable.

    ``interaction_only`` drops the free parts of H_S and H_E from the dynamics
    (the strong-coupling idealisation) while H_S still defines the system energy.
    """

    name: str = "custom"
    mass_x: float = 1.0
    mass_y: float = 1.0
    v_system: Potential = field(default=ZERO)
    v_env: Potential = field(default=ZERO)
    v_int: Potential = field(default=ZERO)
    p_coupling: float = 0.0
    spin_drive: SpinDrive | None = None
    interaction_only: bool = False

    def __post_init__(self):
        for attr in ("v_system", "v_env", "v_int"):
            val = getattr(self, attr)
            if not isinstance(val, Potential):
                object.__setattr__(self, attr, Potential(val))
        if not (self.mass_x > 0 and self.mass_y > 0):
            raise ConfigurationError("masses must be positive")
        if not self.v_system.variables <= {"x", "t"}:
            raise ConfigurationError("v_system may depend on x and t only")
        if not self.v_env.variables <= {"y"}:
            raise ConfigurationError("v_env may depend on y only")
        if not self.v_int.is_zero and self.p_coupling != 0:
            raise ConfigurationError(
                "positional and momentum coupling cannot be combined")

    @property
    def kinetic_x(self) -> float:
        return 0.5 / self.mass_x

    @property
    def kinetic_y(self) -> float:
        return 0.5 / self.mass_y

    @property
    def free_dynamics(self) -> bool:
        return not self.interaction_only

    def velocity_matrix(self) -> np.ndarray:
        """Matrix M with velocity = M p for the quadratic kinetic form of the dynamics."""
        diag = (1 / self.mass_x, 1 / self.mass_y) if self.free_dynamics else (0.0, 0.0)
        lam = self.p_coupling
        return np.array([[diag[0], -lam], [-lam, diag[1]]])

    def kinetic_symbol(self, kx: np.ndarray, ky: np.ndarray) -> np.ndarray:
        """Momentum-space kinetic energy (including -lambda p_x p_y) of the dynamics."""
        sym = -self.p_coupling * kx * ky
        if self.free_dynamics:
            sym = sym + self.kinetic_x * kx ** 2 + self.kinetic_y * ky ** 2
        return sym

    def potential(self, grid: Grid, t: float) -> np.ndarray:
        """Total positional potential entering the dynamics, shape ``(Nx, Ny)``."""
        X, Y = grid.mesh()
        V = self.v_int(X, Y, t)
        if self.free_dynamics:
            V = V + self.v_system(X, Y, t) + self.v_env(X, Y, t)
        return V

    @cached_property
    def static_potential(self) -> bool:
        return not (self.v_system.time_dependent or self.v_int.time_dependent)

    def drive_speed(self, t: float) -> float:
        if self.spin_drive is not None and self.spin_drive.active(t):
            return self.spin_drive.speed
        return 0.0

    def with_params(self, **changes) -> "HamiltonianSpec":
        return replace(self, **changes)


PRESETS = {
    "quadratic_pair": "two particles coupled by (x - y)^2 / 4; H_S = P_X^2/2 + x^2/4, H_int = -xy/2",
    "pp_coupling": "momentum coupling -lambda P_X P_Y evolving alone; H_S = P_X^2/2",
    "spin_steering": "entangled spin-1/2 pair, Y displaced only on its spin-up branch",
    "free_product": "uncoupled particles with optional harmonic traps",
    "custom": "explicit potentials and couplings",
}


def expand_preset(name: str, params: dict | None = None) -> HamiltonianSpec:
    params = dict(params or {})
    if name == "quadratic_pair":
        return HamiltonianSpec(name=name, v_system="x^2/4", v_env="y^2/4", v_int="-x*y/2")
    if name == "pp_coupling":
        lam = float(params.get("lambda", 1.0))
        return HamiltonianSpec(name=name, p_coupling=lam,
                               interaction_only=bool(params.get("interaction_only", True)))
    if name == "spin_steering":
        mass = float(params.get("mass", 1.0))
        try:
            drive = SpinDrive(float(params["v"]), float(params["duration"]))
        except KeyError as exc:
            raise ConfigurationError(f"spin_steering needs parameter {exc.args[0]!r}") from None
        return HamiltonianSpec(name=name, mass_x=mass, mass_y=mass, spin_drive=drive)
    if name == "free_product":
        wx = float(params.get("omega_x", 0.0))
        wy = float(params.get("omega_y", 0.0))
        return HamiltonianSpec(name=name, v_system=f"{wx * wx / 2!r}*x^2",
                               v_env=f"{wy * wy / 2!r}*y^2")
    if name == "custom":
        drive = params.get("spin_drive")
        if drive is not None:
            drive = SpinDrive(float(drive["v"]), float(drive["duration"]))
        return HamiltonianSpec(
            name=name,
            mass_x=float(params.get("mass_x", 1.0)),
            mass_y=float(params.get("mass_y", 1.0)),
            v_system=Potential(params.get("v_system", "0")),
            v_env=Potential(params.get("v_env", "0")),
            v_int=Potential(params.get("v_int", "0")),
            p_coupling=float(params.get("p_coupling", 0.0)),
            spin_drive=drive,
            interaction_only=bool(params.get("interaction_only", False)),
        )
    raise ConfigurationError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")


# ---------------------------------------------------------------------------
# Operator application

def _as_x_array(obj):
    """Amplitudes ``(..., Nx)`` and the grid of a ConditionalState-like object."""
    return np.asarray(obj.amplitudes), obj.grid


def apply_system_hamiltonian(spec: HamiltonianSpec, cstate, t: float | None = None) -> np.ndarray:
    """(-1/2m d^2/dx^2 + V_S(x, t)) applied to a conditional state's amplitudes."""
    amps, grid = _as_x_array(cstate)
    t = cstate.time if t is None else t
    ops = SpectralOps(grid)
    lap = ops.derivative_x(amps, 2)
    return -spec.kinetic_x * lap + spec.v_system(grid.x, 0.0, t) * amps


def dH_S_dt(spec: HamiltonianSpec, grid: Grid, t: float) -> np.ndarray:
    """Explicit time derivative of H_S as a multiplicative field on the x grid."""
    return spec.v_system.time_derivative()(grid.x, 0.0, t)


@dataclass
class AppliedParts:
    """Pieces of H acting on a full ``(spin, Nx, Ny)`` amplitude array."""

    dx: np.ndarray          # d/dx psi
    dy: np.ndarray          # d/dy psi
    system: np.ndarray      # H_S psi (energy observable)
    system_dt: np.ndarray   # (dH_S/dt) psi
    env: np.ndarray         # H_E psi as it enters the dynamics
    interaction: np.ndarray  # H_int psi
    py: np.ndarray          # P_Y psi = -i d/dy psi


def apply_parts(spec: HamiltonianSpec, grid: Grid, amps: np.ndarray, t: float,
                ops: SpectralOps | None = None) -> AppliedParts:
    ops = ops or SpectralOps(grid)
    orders = [(1, 0), (0, 1), (2, 0), (0, 2)]
    if spec.p_coupling:
        orders.append((1, 1))
    derivs = ops.derivatives(amps, orders)
    dx, dy, dxx, dyy = derivs[:4]
    X, Y = grid.mesh()
    system = -spec.kinetic_x * dxx + spec.v_system(X, Y, t) * amps
    system_dt = spec.v_system.time_derivative()(X, Y, t) * amps
    py = -1j * dy
    env = np.zeros_like(amps)
    if spec.free_dynamics:
        env = -spec.kinetic_y * dyy + spec.v_env(X, Y, t) * amps
    v = spec.drive_speed(t)
    if v and amps.shape[0] == 4:
        for s in Y_SPIN_UP:
            env[s] = env[s] + v * py[s]
    interaction = spec.v_int(X, Y, t) * amps
    if spec.p_coupling:
        # -lambda P_X P_Y = lambda d^2/dxdy
        interaction = interaction + spec.p_coupling * derivs[4]
    return AppliedParts(dx=dx, dy=dy, system=system, system_dt=system_dt,
                        env=env, interaction=interaction, py=py)


def apply_hamiltonian(spec: HamiltonianSpec, psi, t: float | None = None) -> np.ndarray:
    """Full dynamical H(t) applied to a JointWaveFunction."""
    t = psi.time if t is None else t
    parts = apply_parts(spec, psi.grid, psi.amplitudes, t)
    total = parts.interaction + parts.env
    if spec.free_dynamics:
        total = total + parts.system
    return total
