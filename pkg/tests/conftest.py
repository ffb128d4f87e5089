"""Shared fixtures: the four reference runs and the 10^4-sample equivariance runs.

The heavy runs are session-scoped so every test module reads the same results.
"""
from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import pytest

from bohmflux.experiments import (EquivarianceObserver, ExperimentConfig, execute,
                                  load_config)
from bohmflux.propagator import evolve
from bohmflux.trajectories import integrate_ensemble, sample_born

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

EQUIVARIANCE_N = 10_000
EQUIVARIANCE_SEED = 0

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[str, str] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split(".")[0]), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def config(name: str) -> ExperimentConfig:
    return load_config(CONFIGS / name)


@pytest.fixture(scope="session")
def qp_mc():
    return execute(config("fig1_quadratic_pair.json"))


@pytest.fixture(scope="session")
def qp_quad():
    return execute(config("fig3_quadratic_pair_quadrature.json"))


@pytest.fixture(scope="session")
def pp_quad():
    return execute(config("fig4_pp.json"))


@pytest.fixture(scope="session")
def steering():
    return execute(config("fig5_steering.json"))


@pytest.fixture(scope="session")
def all_runs(qp_mc, qp_quad, pp_quad, steering):
    return {"qp_mc": qp_mc, "qp_quad": qp_quad, "pp": pp_quad, "steering": steering}


def equivariance_series(cfg: ExperimentConfig, n: int = EQUIVARIANCE_N,
                        seed: int = EQUIVARIANCE_SEED) -> EquivarianceObserver:
    """Trajectories only (no ledger) for a Born sample of size ``n``."""
    data = copy.deepcopy(cfg.raw)
    data["ensemble"].update(mode="monte_carlo", n=n, master_seed=seed)
    cfg = ExperimentConfig.from_dict(data)
    psi0 = cfg.initial()
    spec = cfg.spec()
    obs = EquivarianceObserver()
    integrate_ensemble(evolve(psi0, spec, cfg.plan), sample_born(psi0, n, seed), spec,
                       observers=[obs],
                       time_interpolation=cfg.ensemble["time_interpolation"])
    return obs


@pytest.fixture(scope="session")
def equivariance_runs():
    out = {}
    for key, name in (("quadratic_pair", "fig1_quadratic_pair.json"),
                      ("pp_coupling", "fig4_pp.json"),
                      ("spin_steering", "fig5_steering.json")):
        obs = equivariance_series(config(name))
        out[key] = (np.array(obs.times), np.array(obs.values))
    return out


@pytest.fixture(scope="session")
def qp_from_1_1():
    """Single quadratic-pair trajectory from (x0, y0) = (1, 1) with its ledger, to t = 2."""
    from bohmflux.conditional import LedgerObserver
    from bohmflux.propagator import PropagationPlan
    from bohmflux.trajectories import InitialSample

    cfg = config("fig1_quadratic_pair.json")
    spec = cfg.spec()
    obs = LedgerObserver()
    traj = integrate_ensemble(evolve(cfg.initial(), spec, PropagationPlan(1e-3, 2.0, 10)),
                              [InitialSample((1.0, 1.0))], spec, observers=[obs])
    return traj, obs.ledger()
