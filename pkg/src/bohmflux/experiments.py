"""Configuration-driven experiment runner.

A run expands a preset, propagates the joint state, integrates the trajectory
ensemble while the energy ledger and the field quantities are collected per
snapshot, aggregates the ensemble, checks the result against the closed-form
oracles and writes figure-ready data files plus a manifest with digests.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
from scipy.integrate import quad
from scipy.stats import norm

from . import __version__
from . import oracles as O
from .conditional import LEDGER_HEADER, EnergyLedger, LedgerObserver, write_ledger_csv
from .ensemble_stats import (EnsembleReport, FieldObserver, aggregate, report_residuals,
                             write_report_csv, write_report_json)
from .errors import ConfigurationError
from .grid import Grid, JointWaveFunction, make_gaussian_product, save_snapshot
from .hamiltonian import PRESETS, HamiltonianSpec, expand_preset
from .propagator import PropagationPlan, evolve
from .trajectories import (TrajectorySet, equivariance_statistic, integrate_ensemble,
                           quadrature_nodes, sample_born, write_trajectories_csv,
                           write_trajectory_manifest)

log = logging.getLogger(__name__)

OUTPUT_ENV = "BOHMFLUX_OUTPUT_DIR"

EQUIVARIANCE_MIN_SAMPLES = 10_000   # the statistic's budgets are sampling-noise bounds at this size

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "preset", "grid", "plan", "ensemble"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "preset": {"enum": sorted(PRESETS)},
        "params": {"type": "object"},
        "initial_state": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma_x": _POSITIVE,
                "sigma_y": _POSITIVE,
                "k": {"type": "number"},
                "spin_preset": {"enum": ["scalar", "steering"]},
            },
        },
        "grid": {
            "type": "object",
            "required": ["points", "extent"],
            "additionalProperties": False,
            "properties": {
                "points": {"oneOf": [{"type": "integer", "minimum": 16},
                                     {"type": "array", "items": {"type": "integer", "minimum": 16},
                                      "minItems": 2, "maxItems": 2}]},
                "extent": {"oneOf": [_POSITIVE, {"type": "array", "items": _POSITIVE,
                                                 "minItems": 2, "maxItems": 2}]},
            },
        },
        "plan": {
            "type": "object",
            "required": ["dt", "t_final"],
            "additionalProperties": False,
            "properties": {
                "dt": _POSITIVE,
                "t_final": _POSITIVE,
                "snapshot_stride": {"type": "integer", "minimum": 1},
                "norm_abort": _POSITIVE,
                "boundary_tolerance": _POSITIVE,
            },
        },
        "ensemble": {
            "type": "object",
            "required": ["mode"],
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["monte_carlo", "quadrature"]},
                "n": {"type": "integer", "minimum": 1},
                "resolution": {"type": "integer", "minimum": 8},
                "master_seed": {"type": "integer", "minimum": 0},
                "threads": {"type": "integer", "minimum": 1},
                "time_interpolation": {"enum": ["linear", "hermite"]},
            },
            "if": {"properties": {"mode": {"const": "monte_carlo"}}},
            "then": {"required": ["n", "master_seed"]},
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
                "max_trajectories": {"type": "integer", "minimum": 0},
                "snapshots": {"type": "boolean"},
            },
        },
        "comparison": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "oracle": {"type": "boolean"},
                "tolerances": {"type": "object", "additionalProperties": _POSITIVE},
            },
        },
    },
}

_INITIAL_DEFAULTS = {
    "quadratic_pair": {"sigma_x": 2 ** -0.5, "sigma_y": 2 ** -0.5},
    "pp_coupling": {"sigma_x": 2 ** -0.5, "sigma_y": 2 ** -0.5},
    "spin_steering": {"sigma_x": 1.0, "sigma_y": 1.0, "k": 2.0, "spin_preset": "steering"},
}

DEFAULT_TOLERANCES = {
    "closure": 5e-4,
    "identity": 1e-3,
    "oracle": 1e-3,
    "initial_u": 1e-6,
    "cum_int": 2e-3,
    "fidelity": 1e-6,
    "commutator_rel": 1e-3,
    "capped_fraction": 1e-4,
    "equivariance_initial": 0.08,
    "equivariance": 0.12,
    "steering_band": 0.05,
    "variance_ratio": 10.0,
}


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    name: str
    preset: str
    params: dict
    initial_state: dict
    grid: Grid
    plan: PropagationPlan
    ensemble: dict
    outputs: dict
    comparison: dict
    raw: dict = field(repr=False)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigurationError(f"config invalid at {where}: {exc.message}") from None
        raw = copy.deepcopy(data)
        g = data["grid"]
        p = data["plan"]
        plan = PropagationPlan(
            dt=p["dt"], t_final=p["t_final"], snapshot_stride=p.get("snapshot_stride", 1),
            norm_abort=p.get("norm_abort", 1e-6),
            boundary_tolerance=p.get("boundary_tolerance", 1e-10))
        initial = dict(_INITIAL_DEFAULTS.get(data["preset"], {"sigma_x": 1.0, "sigma_y": 1.0}))
        initial.update(data.get("initial_state", {}))
        tol = dict(DEFAULT_TOLERANCES)
        comparison = dict(data.get("comparison", {}))
        tol.update(comparison.get("tolerances", {}))
        comparison["tolerances"] = tol
        comparison.setdefault("oracle", True)
        outputs = {"formats": ["csv", "json"], "max_trajectories": 200, "snapshots": False}
        outputs.update(data.get("outputs", {}))
        ensemble = {"threads": 1, "resolution": 128, "time_interpolation": "linear"}
        ensemble.update(data["ensemble"])
        return cls(name=data["name"], preset=data["preset"], params=dict(data.get("params", {})),
                   initial_state=initial, grid=Grid(g["points"], g["extent"]), plan=plan,
                   ensemble=ensemble, outputs=outputs, comparison=comparison, raw=raw)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        if seed < 0 or seed >= 2 ** 64:
            raise ConfigurationError("seed override must be an unsigned 64-bit integer")
        data = copy.deepcopy(self.raw)
        data["ensemble"]["master_seed"] = int(seed)
        return ExperimentConfig.from_dict(data)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def tolerances(self) -> dict:
        return self.comparison["tolerances"]

    def spec(self) -> HamiltonianSpec:
        return expand_preset(self.preset, self.params)

    def initial(self) -> JointWaveFunction:
        s = self.initial_state
        return make_gaussian_product(self.grid, s["sigma_x"], s["sigma_y"], k=s.get("k", 0.0),
                                     spin_preset=s.get("spin_preset", "scalar"))


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_file(path)


# ---------------------------------------------------------------------------
# Checks


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        v = float(self.value)
        return {"name": self.name, "value": v if np.isfinite(v) else None,
                "tolerance": float(self.tolerance), "passed": bool(self.passed),
                "detail": self.detail}


def _upper(name, value, tol, detail="") -> Check:
    value = float(value)
    return Check(name, value, tol, bool(np.isfinite(value) and value <= tol), detail)


def _lower(name, value, tol, detail="") -> Check:
    value = float(value)
    return Check(name, value, tol, bool(np.isfinite(value) and value >= tol), detail)


def _max(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.nanmax(a)) if a.size and np.isfinite(a).any() else float("nan")


class EquivarianceObserver:
    """Equivariance statistic of the live ensemble at every snapshot."""

    def __init__(self):
        self.times: list[float] = []
        self.values: list[float] = []

    def __call__(self, fields, positions, velocities, index, active):
        self.times.append(fields.time)
        self.values.append(equivariance_statistic(positions[active], fields.psi))


class FidelityObserver:
    """``|<Psi_exact|Psi>|^2`` against a closed-form scalar state at every snapshot."""

    def __init__(self, exact):
        self.exact = exact
        self.times: list[float] = []
        self.values: list[float] = []

    def __call__(self, fields, positions=None, velocities=None, index=None, active=None):
        psi = fields.psi
        X, Y = psi.grid.mesh()
        ref = self.exact(X, Y, psi.time)
        a = psi.amplitudes[0]
        ov = np.vdot(ref, a) * psi.grid.cell_area
        nr = np.vdot(ref, ref).real * psi.grid.cell_area
        self.times.append(psi.time)
        self.values.append(float(abs(ov) ** 2 / (nr * psi.norm_squared())))


def generic_checks(traj: TrajectorySet, ledger: EnergyLedger, report: EnsembleReport,
                   tol: dict, equivariance: EquivarianceObserver | None = None) -> list[Check]:
    out = []
    inc = traj.included
    ratio = np.abs(ledger.closure_residual[inc]) / (1 + np.abs(ledger.du_total_check[inc]))
    out.append(_upper("closure", _max(ratio), tol["closure"],
                      "max |du_ext+du_int+du_ent-du_fd| / (1+|du_fd|)"))
    out.append(_upper("capped_fraction", traj.capped_fraction, tol["capped_fraction"]))
    ident = report.var_int + report.var_ent + 2 * report.cov_int_ent
    scale = max(1.0, _max(np.abs(report.var_total)))
    out.append(_upper("variance_identity", _max(np.abs(report.var_total - ident)),
                      1e-12 * scale))
    res = report_residuals(report)
    mc = report.mode == "monte_carlo"
    pairs = (("identity_16", res["res16"], report.se_u),
             ("identity_17", res["res17"], report.se_du_ext),
             ("identity_18", res["res18"], report.se_du_int + report.se_du_ent))
    for name, r, se in pairs:
        # quadrature ensembles are judged absolutely, Monte Carlo ones by 3 standard errors
        excess = r - 3 * se if mc else r
        out.append(_upper(name, _max(excess), tol["identity"]))
    if report.commutator_rate is not None:
        gap = np.abs(report.mean_du_ent - report.commutator_rate)
        if mc:
            gap = gap - 3 * report.se_du_ent
        out.append(_upper("ent_rate_estimators", _max(gap), tol["identity"],
                          "ensemble mean du_ent vs configuration-space integral"))
    if equivariance is not None and equivariance.values:
        v = np.array(equivariance.values)
        out.append(_upper("equivariance_initial", v[0], tol["equivariance_initial"]))
        if len(v) > 1:
            out.append(_upper("equivariance", v[1:].max(), tol["equivariance"]))
    return out


ORACLE_SUPPORT = 1e-8   # quadrature nodes below this relative Born weight skip pointwise comparisons


def _oracle_rows(traj: TrajectorySet) -> np.ndarray:
    """Trajectories compared pointwise against closed forms.

    Far-tail quadrature nodes still enter every ensemble average, but they reach
    the box edge where the state is ~1e-12 of its peak and slices lose accuracy.
    """
    inc = traj.included.copy()
    if traj.mode == "quadrature":
        inc &= traj.weights >= ORACLE_SUPPORT * traj.weights.max()
    return inc


def _support_note(traj, inc) -> str:
    skipped = int(traj.included.sum() - inc.sum())
    return f"{skipped} far-tail nodes skipped" if skipped else ""


def _quadratic_pair_checks(traj, ledger, report, cfg, extra) -> list[Check]:
    tol = cfg.tolerances
    inc = _oracle_rows(traj)
    note = _support_note(traj, inc)
    t = traj.times
    z0 = np.array([s.z0 for s in traj.samples])[inc]
    x0, y0 = z0[:, :1], z0[:, 1:]
    Y = traj.positions[inc, :, 1]
    vy = traj.velocities[inc, :, 1]
    out = []
    fid = extra.get("fidelity")
    if fid is not None:
        out.append(_upper("state_fidelity", 1 - min(fid.values), tol["fidelity"],
                          "1 - min fidelity against the closed-form state"))
    out.append(_upper("trajectory_Y", np.abs(Y - O.qp_Y(t, x0, y0)).max(), tol["oracle"], note))
    u = ledger.u[inc]
    out.append(_upper("u_initial", np.abs(u[:, 0] - 3 / 8).max(), tol["initial_u"]))
    out.append(_upper("u_along_trajectories", np.abs(u - O.qp_u(t, Y)).max(), tol["oracle"], note))
    out.append(_upper("du_int", np.abs(ledger.du_int[inc] - O.qp_du_int(t, Y)).max(),
                      tol["oracle"], note))
    out.append(_upper("du_ent", np.abs(ledger.du_ent[inc] - O.qp_du_ent(t, Y, vy)).max(),
                      tol["oracle"], note))
    out.append(_upper("cum_int", np.abs(ledger.cum_int[inc] - O.qp_cum_int(t, x0, y0)).max(),
                      tol["cum_int"], note))
    if traj.mode == "quadrature":
        if t[-1] >= 2 - 1e-9:
            k = traj.time_index(2.0)
            out.append(_upper("mean_delta_u_t2", abs(report.mean_delta_u[k] - O.qp_mean_delta_u(2.0)),
                              tol["identity"]))
            out.append(_upper("mean_cum_ent_t2", abs(report.mean_cum_ent[k]), tol["identity"]))
        if t[-1] >= 3 - 1e-9:
            k = traj.time_index(3.0)
            out.append(_lower("variance_ratio_t3", report.var_int[k] / report.var_ent[k],
                              tol["variance_ratio"], "var_int / var_ent"))
    else:
        excess = np.abs(report.mean_cum_ent) - 3 * report.se_cum_ent
        out.append(_upper("mean_cum_ent", _max(excess), tol["identity"], "beyond 3 standard errors"))
    return out


def _pp_checks(traj, ledger, report, cfg, extra) -> list[Check]:
    tol = cfg.tolerances
    lam = float(cfg.params.get("lambda", 1.0))
    t = report.times
    out = []
    m = (lam * t >= 0.1 - 1e-12) & (lam * t <= 2 + 1e-12)
    if m.any():
        ref = O.pp_avg_ent_rate(t[m], lam)
        rel = np.abs(report.commutator_rate[m] - ref) / np.abs(ref)
        out.append(_upper("commutator_rate", rel.max(), tol["commutator_rel"],
                          "relative error for lambda t in [0.1, 2]"))
    out.append(_upper("expectation_hs", np.abs(report.expectation_hs - O.pp_expectation_hs(t)).max(),
                      tol["identity"]))
    inc = _oracle_rows(traj)
    Y = traj.positions[inc, :, 1]
    out.append(_upper("u_along_trajectories",
                      np.abs(ledger.u[inc] - O.pp_u_of_y(traj.times, Y, lam)).max(), tol["oracle"],
                      _support_note(traj, inc)))
    return out


def steering_oracle(cfg: ExperimentConfig) -> O.SpinSteeringOracle:
    s = cfg.initial_state
    return O.SpinSteeringOracle(sigma_x=s["sigma_x"], sigma_y=s["sigma_y"], k=s.get("k", 0.0),
                                v=float(cfg.params["v"]), m=float(cfg.params.get("mass", 1.0)))


def steering_gap_mass(oracle: O.SpinSteeringOracle, t: float, band: float) -> float:
    """Born mass whose idealized conditional energy lies more than ``band`` from both levels."""
    s = oracle.v * t
    pdf = lambda y: 0.5 * (norm.pdf(y, 0, oracle.sigma_y) + norm.pdf(y, s, oracle.sigma_y))  # noqa: E731
    # moving fraction is monotone in y; the band edges solve m(y) = band, 1 - band
    mid = s / 2
    half = oracle.sigma_y ** 2 * np.log((1 - band) / band) / s if s else np.inf
    if not np.isfinite(half):
        return 1.0
    return float(quad(pdf, mid - half, mid + half)[0])


def _steering_checks(traj, ledger, report, cfg, extra) -> list[Check]:
    tol = cfg.tolerances
    oracle = steering_oracle(cfg)
    tau = float(cfg.params["duration"])
    k = traj.time_index(min(tau, traj.times[-1]))
    inc = traj.included
    e = (ledger.u[inc, k] - oracle.energy_0) / oracle.splitting
    dist = np.minimum(np.abs(e), np.abs(e - 1))
    n = int(inc.sum())
    band = tol["steering_band"]
    out = [_upper("steering_convergence", dist.max(), band,
                  f"max distance to the nearest level in units of the splitting; "
                  f"{int((dist > band).sum())} of {n} outside")]
    frac = float((e > 0.5).mean())
    out.append(_upper("steering_upper_fraction", abs(frac - 0.5), 3 / np.sqrt(n),
                      f"upper-branch fraction {frac:.4f}"))
    p = steering_gap_mass(oracle, traj.times[k], band)
    count = int((dist > band).sum())
    out.append(_upper("steering_gap_count", abs(count - n * p),
                      3 * np.sqrt(n * p * (1 - p)) + 1,
                      f"{count} unconverged vs {n * p:.2f} expected from the idealized density"))
    Y = traj.positions[inc, k, 1]
    out.append(_upper("u_vs_idealized", np.abs(ledger.u[inc, k] - O.ss_u(Y, traj.times[k], oracle)).max()
                      / oracle.splitting, band, "at the end of the drive, in units of the splitting"))
    return out


PRESET_CHECKS = {
    "quadratic_pair": _quadratic_pair_checks,
    "pp_coupling": _pp_checks,
    "spin_steering": _steering_checks,
}


def _fidelity_reference(cfg: ExperimentConfig):
    if cfg.preset == "quadratic_pair":
        return O.qp_psi
    if cfg.preset == "pp_coupling" and cfg.spec().interaction_only:
        lam = float(cfg.params.get("lambda", 1.0))
        return lambda x, y, t: O.pp_psi(x, y, t, lam)
    return None


# ---------------------------------------------------------------------------
# Pipeline


@dataclass
class RunResult:
    config: ExperimentConfig
    trajectories: TrajectorySet
    ledger: EnergyLedger
    report: EnsembleReport
    checks: list[Check]
    equivariance: EquivarianceObserver | None = None
    fidelity: FidelityObserver | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


class _SnapshotWriter:
    def __init__(self, directory: Path):
        self.directory = directory
        self.entries: list[dict] = []
        directory.mkdir(parents=True, exist_ok=True)

    def __call__(self, fields, *args):
        name = f"snapshot_{len(self.entries):05d}.bflx"
        save_snapshot(fields.psi, self.directory / name)
        self.entries.append({"index": len(self.entries), "time": fields.time, "file": name})

    def write_manifest(self) -> None:
        (self.directory / "manifest.json").write_text(
            json.dumps({"snapshots": self.entries}, indent=2) + "\n")


def execute(cfg: ExperimentConfig, threads: int | None = None,
            snapshot_dir: Path | None = None) -> RunResult:
    """Run the full pipeline in memory and evaluate all checks."""
    spec = cfg.spec()
    psi0 = cfg.initial()
    ens = cfg.ensemble
    threads = threads or ens.get("threads", 1)
    if ens["mode"] == "monte_carlo":
        samples = sample_born(psi0, ens["n"], ens["master_seed"])
        weights = None
    else:
        samples, weights = quadrature_nodes(psi0, ens["resolution"])
    ledger_obs = LedgerObserver()
    field_obs = FieldObserver()
    observers = [ledger_obs, field_obs]
    eqv = None
    if ens["mode"] == "monte_carlo" and len(samples) >= EQUIVARIANCE_MIN_SAMPLES:
        eqv = EquivarianceObserver()
        observers.append(eqv)
    fid = None
    ref = _fidelity_reference(cfg) if cfg.comparison["oracle"] else None
    if ref is not None:
        fid = FidelityObserver(ref)
        observers.append(fid)
    writer = None
    if snapshot_dir is not None:
        writer = _SnapshotWriter(snapshot_dir)
        observers.append(writer)
    traj = integrate_ensemble(evolve(psi0, spec, cfg.plan), samples, spec,
                              observers=observers, weights=weights, threads=threads,
                              mode=ens["mode"], time_interpolation=ens["time_interpolation"])
    if writer is not None:
        writer.write_manifest()
    ledger = ledger_obs.ledger(cfg.tolerances["closure"])
    report = field_obs.attach(aggregate(ledger, None if weights is None else traj.weights,
                                        mode=ens["mode"]))
    checks = generic_checks(traj, ledger, report, cfg.tolerances, eqv)
    if cfg.comparison["oracle"] and cfg.preset in PRESET_CHECKS:
        checks += PRESET_CHECKS[cfg.preset](traj, ledger, report, cfg, {"fidelity": fid})
    return RunResult(cfg, traj, ledger, report, checks, eqv, fid)


# ---------------------------------------------------------------------------
# Manifest and file output


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    wall_clock: float
    files: dict
    checks: list
    output_dir: str = ""
    environment: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "code_version": self.code_version,
                "wall_clock_seconds": self.wall_clock, "passed": self.passed,
                "checks": self.checks, "files": self.files, "environment": self.environment}

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def resolve_output_dir(cfg: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.outputs.get("directory"):
        return Path(cfg.outputs["directory"])
    base = os.environ.get(OUTPUT_ENV)
    return Path(base or "bohmflux_runs") / cfg.name


def oracle_check(config) -> dict:
    """Oracle self-consistency suite only; no propagation."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    params = dict(cfg.params)
    if cfg.preset == "spin_steering":
        o = steering_oracle(cfg)
        params.update(sigma_x=o.sigma_x, sigma_y=o.sigma_y, k=o.k, v=o.v, m=o.m)
    suite = O.oracle_suite(cfg.preset, params)
    checks = [_upper(name, value, tol) for name, (value, tol) in suite.items()]
    return {"preset": cfg.preset, "passed": all(c.passed for c in checks),
            "checks": [c.to_dict() for c in checks]}


def write_outputs(result: RunResult, out: Path, oracle_report: dict | None = None) -> list[Path]:
    cfg = result.config
    fmts = cfg.outputs["formats"]
    limit = cfg.outputs["max_trajectories"]
    traj = result.trajectories
    written = min(limit, len(traj))
    paths = []
    if "csv" in fmts:
        paths.append(write_trajectories_csv(traj, out / "trajectories.csv", limit=written))
        ids = [s.index for s in traj.samples[:written]]
        p = out / "ledger.csv"
        write_ledger_csv(result.ledger.select(slice(0, written)), ids, p)
        paths.append(p)
        p = out / "report.csv"
        write_report_csv(result.report, p)
        paths.append(p)
    if "json" in fmts:
        p = out / "report.json"
        write_report_json(result.report, p)
        paths.append(p)
    paths.append(write_trajectory_manifest(traj, out / "trajectories_manifest.json",
                                           master_seed=cfg.ensemble.get("master_seed"),
                                           written=written))
    comparison = {"preset": cfg.preset, "checks": [c.to_dict() for c in result.checks]}
    if result.equivariance is not None:
        comparison["equivariance"] = {"times": result.equivariance.times,
                                      "values": result.equivariance.values}
    if result.fidelity is not None:
        comparison["fidelity"] = {"times": result.fidelity.times,
                                  "values": result.fidelity.values}
    if oracle_report is not None:
        comparison["oracle_suite"] = oracle_report
    p = out / "oracle_comparison.json"
    p.write_text(json.dumps(comparison, indent=2) + "\n")
    paths.append(p)
    p = out / "config.json"
    p.write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    paths.append(p)
    return paths


def run(config, output_dir=None, seed_override: int | None = None,
        threads: int | None = None) -> RunManifest:
    """Execute a configured experiment and write its data files and manifest."""
    start = time.perf_counter()
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    if seed_override is not None:
        cfg = cfg.with_seed(seed_override)
    out = resolve_output_dir(cfg, output_dir)
    out.mkdir(parents=True, exist_ok=True)
    snap_dir = out / "snapshots" if cfg.outputs["snapshots"] else None
    result = execute(cfg, threads=threads, snapshot_dir=snap_dir)
    suite = oracle_check(cfg) if cfg.comparison["oracle"] else None
    write_outputs(result, out, suite)
    checks = [c.to_dict() for c in result.checks]
    if suite is not None:
        checks += [dict(c, name="oracle_suite." + c["name"]) for c in suite["checks"]]
    files = {str(p.relative_to(out)): sha256_file(p)
             for p in sorted(out.rglob("*")) if p.is_file() and p != out / "manifest.json"}
    manifest = RunManifest(
        config_hash=cfg.config_hash, code_version=__version__,
        wall_clock=time.perf_counter() - start, files=files, checks=checks,
        output_dir=str(out),
        environment={"python": platform.python_version(), "numpy": np.__version__})
    manifest.write(out / "manifest.json")
    for c in result.checks:
        log.info("%s %s value=%.3e tol=%.3e", "PASS" if c.passed else "FAIL",
                 c.name, c.value, c.tolerance)
    return manifest


def list_presets() -> str:
    width = max(map(len, PRESETS))
    return "\n".join(f"{name:<{width}}  {text}" for name, text in PRESETS.items())


__all__ = ["CONFIG_SCHEMA", "ExperimentConfig", "Check", "RunResult", "RunManifest",
           "load_config", "execute", "run", "oracle_check", "list_presets",
           "resolve_output_dir", "LEDGER_HEADER"]
