"""Ensemble averages of the energy ledger and the identities they must satisfy.

Field-level quantities (``<H_S>``, ``Tr sigma dH_S/dt``, the table ``u(t, y)``
and the configuration-space estimator of the average entanglement rate) are
computed directly from snapshots, independently of any trajectory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conditional import EnergyLedger, time_derivative
from .errors import ConfigurationError
from .grid import JointWaveFunction
from .hamiltonian import HamiltonianSpec
from .trajectories import SnapshotFields

_EMPTY_COLUMN = 1e-14   # relative column weight below which u(t, y) is left at zero


def _fields(psi, spec) -> SnapshotFields:
    return psi if isinstance(psi, SnapshotFields) else SnapshotFields(psi, spec)


def expectation_hs(psi, spec: HamiltonianSpec | None = None) -> float:
    f = _fields(psi, spec)
    a = f.psi.amplitudes
    return float(np.sum(np.conj(a) * f.parts.system).real * f.grid.cell_area)


def trace_dhs_dt(psi, spec: HamiltonianSpec | None = None) -> float:
    f = _fields(psi, spec)
    a = f.psi.amplitudes
    return float(np.sum(np.conj(a) * f.parts.system_dt).real * f.grid.cell_area)


def u_of_y_table(psi, spec: HamiltonianSpec | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Conditional energy on every environment grid line: ``(y, u(t, y))``."""
    f = _fields(psi, spec)
    a = f.psi.amplitudes
    num = np.sum(np.conj(a) * f.parts.system, axis=(0, 1)).real
    den = np.sum(np.abs(a) ** 2, axis=(0, 1))
    ok = den > _EMPTY_COLUMN * den.max()
    u = np.zeros_like(num)
    u[ok] = num[ok] / den[ok]
    return f.grid.y, u


def interaction_slice_rate(psi, spec: HamiltonianSpec | None = None) -> np.ndarray:
    """``-i <x,y|[H_int, sigma]|x,y> = 2 Im(Psi^* H_int Psi)`` summed over spin."""
    f = _fields(psi, spec)
    return 2 * np.sum(np.imag(np.conj(f.psi.amplitudes) * f.parts.interaction), axis=0)


def avg_ent_rate_commutator(psi, spec: HamiltonianSpec | None = None,
                            u_table: np.ndarray | None = None) -> float:
    """Configuration-space integral of ``u(t, y)`` against the interaction slice rate."""
    f = _fields(psi, spec)
    if u_table is None:
        _, u_table = u_of_y_table(f)
    s = interaction_slice_rate(f)
    return float(np.sum(s * u_table[None, :]) * f.grid.cell_area)


class FieldObserver:
    """Records the trajectory-free quantities at every snapshot."""

    def __init__(self, keep_table: bool = True):
        self.keep_table = keep_table
        self.times: list[float] = []
        self.expectation_hs: list[float] = []
        self.trace_dhs: list[float] = []
        self.commutator: list[float] = []
        self.tables: list[np.ndarray] = []
        self.y: np.ndarray | None = None

    def __call__(self, fields, positions=None, velocities=None, index=None, active=None):
        y, u = u_of_y_table(fields)
        self.y = y
        self.times.append(fields.time)
        self.expectation_hs.append(expectation_hs(fields))
        self.trace_dhs.append(trace_dhs_dt(fields))
        self.commutator.append(avg_ent_rate_commutator(fields, u_table=u))
        if self.keep_table:
            self.tables.append(u)

    def attach(self, report: "EnsembleReport") -> "EnsembleReport":
        if not np.allclose(report.times, self.times, atol=1e-12):
            raise ConfigurationError("field observer and ledger times differ")
        report.expectation_hs = np.array(self.expectation_hs)
        report.trace_dhs_dt = np.array(self.trace_dhs)
        report.commutator_rate = np.array(self.commutator)
        if self.keep_table:
            report.u_of_y_table = np.array(self.tables)
            report.y_grid = self.y
        return report


@dataclass
class EnsembleReport:
    times: np.ndarray
    n: int
    mode: str
    mean_u: np.ndarray
    mean_du_ext: np.ndarray
    mean_du_int: np.ndarray
    mean_du_ent: np.ndarray
    se_u: np.ndarray
    se_du_ext: np.ndarray
    se_du_int: np.ndarray
    se_du_ent: np.ndarray
    mean_delta_u: np.ndarray
    mean_cum_ext: np.ndarray
    mean_cum_int: np.ndarray
    mean_cum_ent: np.ndarray
    var_total: np.ndarray
    var_int: np.ndarray
    var_ent: np.ndarray
    cov_int_ent: np.ndarray
    se_delta_u: np.ndarray | None = None
    se_cum_ent: np.ndarray | None = None
    expectation_hs: np.ndarray | None = None
    trace_dhs_dt: np.ndarray | None = None
    commutator_rate: np.ndarray | None = None
    u_of_y_table: np.ndarray | None = field(default=None, repr=False)
    y_grid: np.ndarray | None = field(default=None, repr=False)


def _weighted_moments(x: np.ndarray, w: np.ndarray):
    mean = np.einsum("i,it->t", w, x)
    dev = x - mean
    return mean, dev


def aggregate(ledgers: EnergyLedger | Sequence[EnergyLedger], weights=None,
              mode: str | None = None) -> EnsembleReport:
    """Weighted ensemble moments per time.

    Rows containing NaN (excluded trajectories) get zero weight.  Standard
    errors are ``std / sqrt(n)`` for Monte Carlo ensembles and zero for
    quadrature ensembles.
    """
    if isinstance(ledgers, EnergyLedger):
        led = ledgers
        stack = {k: np.atleast_2d(getattr(led, k)) for k in
                 ("u", "du_ext", "du_int", "du_ent", "cum_ext", "cum_int", "cum_ent")}
        times = led.times
    else:
        if not ledgers:
            raise ConfigurationError("empty ensemble")
        times = ledgers[0].times
        for lg in ledgers:
            if lg.times.shape != times.shape or np.any(np.abs(lg.times - times) > 1e-12):
                raise ConfigurationError("ledgers must share a time grid")
        stack = {k: np.concatenate([np.atleast_2d(getattr(lg, k)) for lg in ledgers]) for k in
                 ("u", "du_ext", "du_int", "du_ent", "cum_ext", "cum_int", "cum_ent")}
    n_rows = stack["u"].shape[0]
    if n_rows == 0:
        raise ConfigurationError("empty ensemble")
    if weights is None:
        w = np.full(n_rows, 1.0)
        mode = mode or "monte_carlo"
    else:
        w = np.asarray(weights, dtype=float).copy()
        mode = mode or "quadrature"
    bad = ~np.all(np.isfinite(np.stack(list(stack.values()))), axis=(0, 2))
    w[bad] = 0.0
    if not w.sum() > 0:
        raise ConfigurationError("empty ensemble")
    w = w / w.sum()
    stack = {k: np.where(bad[:, None], 0.0, v) for k, v in stack.items()}
    stack["delta_u"] = stack["u"] - stack["u"][:, :1]
    n_eff = int((~bad).sum())

    means, devs = {}, {}
    for k, v in stack.items():
        means[k], devs[k] = _weighted_moments(v, w)

    def cov(a, b):
        return np.einsum("i,it,it->t", w, a, b)

    def se(k):
        if mode == "quadrature" or n_eff < 2:
            return np.zeros_like(means[k])
        return np.sqrt(cov(devs[k], devs[k]) * n_eff / (n_eff - 1) / n_eff)

    total = stack["cum_int"] + stack["cum_ent"]
    _, dev_total = _weighted_moments(total, w)
    return EnsembleReport(
        times=np.asarray(times), n=n_eff, mode=mode,
        mean_u=means["u"], mean_du_ext=means["du_ext"], mean_du_int=means["du_int"],
        mean_du_ent=means["du_ent"], se_u=se("u"), se_du_ext=se("du_ext"),
        se_du_int=se("du_int"), se_du_ent=se("du_ent"),
        mean_delta_u=means["delta_u"], mean_cum_ext=means["cum_ext"],
        mean_cum_int=means["cum_int"], mean_cum_ent=means["cum_ent"],
        var_total=cov(dev_total, dev_total), var_int=cov(devs["cum_int"], devs["cum_int"]),
        var_ent=cov(devs["cum_ent"], devs["cum_ent"]),
        cov_int_ent=cov(devs["cum_int"], devs["cum_ent"]),
        se_delta_u=se("delta_u"), se_cum_ent=se("cum_ent"))


def _field_series(report, snapshots, spec, attr, fn):
    val = getattr(report, attr)
    if val is not None:
        return val
    if snapshots is None:
        raise ConfigurationError(f"report lacks {attr}; pass the snapshots")
    return np.array([fn(s, spec) for s in snapshots])


def check_identity_16(report: EnsembleReport, snapshots: Sequence[JointWaveFunction] | None = None,
                      spec: HamiltonianSpec | None = None) -> np.ndarray:
    """``|<<u>> - <Psi|H_S|Psi>|`` per time."""
    hs = _field_series(report, snapshots, spec, "expectation_hs", expectation_hs)
    return np.abs(report.mean_u - hs)


def check_identity_17_18(report: EnsembleReport,
                         snapshots: Sequence[JointWaveFunction] | None = None,
                         spec: HamiltonianSpec | None = None) -> tuple[np.ndarray, np.ndarray]:
    """External-work and internal-exchange residuals per time."""
    hs = _field_series(report, snapshots, spec, "expectation_hs", expectation_hs)
    tr = _field_series(report, snapshots, spec, "trace_dhs_dt", trace_dhs_dt)
    res17 = np.abs(tr - report.mean_du_ext)
    dhs = time_derivative(np.asarray(hs, dtype=float), np.asarray(report.times))
    res18 = np.abs(dhs - tr - (report.mean_du_int + report.mean_du_ent))
    return res17, res18


def variance_decomposition(report: EnsembleReport):
    return report.var_total, report.var_int, report.var_ent, report.cov_int_ent


REPORT_HEADER = ("t,mean_u,mean_du_ext,mean_du_int,mean_du_ent,var_total,var_int,"
                 "var_ent,cov_int_ent,res16,res17,res18")


def report_residuals(report: EnsembleReport) -> dict:
    out = {"res16": np.full(len(report.times), np.nan),
           "res17": np.full(len(report.times), np.nan),
           "res18": np.full(len(report.times), np.nan)}
    if report.expectation_hs is not None:
        out["res16"] = check_identity_16(report)
        if report.trace_dhs_dt is not None:
            out["res17"], out["res18"] = check_identity_17_18(report)
    return out


def write_report_csv(report: EnsembleReport, path) -> None:
    res = report_residuals(report)
    cols = [report.times, report.mean_u, report.mean_du_ext, report.mean_du_int,
            report.mean_du_ent, report.var_total, report.var_int, report.var_ent,
            report.cov_int_ent, res["res16"], res["res17"], res["res18"]]
    np.savetxt(path, np.column_stack(cols), fmt="%.17g", delimiter=",",
               header=REPORT_HEADER, comments="")


def _clean(values) -> list:
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(values, float)]


def report_to_dict(report: EnsembleReport) -> dict:
    res = report_residuals(report)
    out = {"n": report.n, "mode": report.mode}
    for k in ("times", "mean_u", "mean_du_ext", "mean_du_int", "mean_du_ent", "se_u",
              "se_du_ext", "se_du_int", "se_du_ent", "mean_delta_u", "mean_cum_ext",
              "mean_cum_int", "mean_cum_ent", "var_total", "var_int", "var_ent",
              "cov_int_ent", "expectation_hs", "trace_dhs_dt", "commutator_rate"):
        v = getattr(report, k)
        out[k] = None if v is None else _clean(v)
    out.update({k: _clean(v) for k, v in res.items()})
    return out


def write_report_json(report: EnsembleReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=1)
        fh.write("\n")
