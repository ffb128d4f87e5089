import numpy as np
import pytest
from scipy.integrate import solve_ivp

from bohmflux import oracles as O
from bohmflux.errors import ConfigurationError, ExclusionQuotaError, OutOfDomainError
from bohmflux.grid import Grid, JointWaveFunction, make_gaussian_product
from bohmflux.hamiltonian import expand_preset
from bohmflux.propagator import PropagationPlan, evolve
from bohmflux.trajectories import (TRAJECTORY_HEADER, InitialSample, equivariance_statistic,
                                   integrate_ensemble, quadrature_nodes, sample_born,
                                   trajectory_manifest, velocity_field, write_trajectories_csv)

S = 2 ** -0.5


@pytest.fixture(scope="module")
def psi0():
    return make_gaussian_product(Grid(256, 14.0), S, S)


@pytest.fixture(scope="module")
def born(psi0):
    return sample_born(psi0, 10_000, 0)


def closed_form_state(t, grid=Grid(256, 14.0)):
    X, Y = grid.mesh()
    return JointWaveFunction(grid, O.qp_psi(X, Y, t)[None], t)


def test_sample_moments(born):
    z = np.array([s.z0 for s in born])
    n = len(z)
    assert np.all(np.abs(z.mean(axis=0)) < 4 / np.sqrt(n))
    assert np.all(np.abs(z.var(axis=0) - 0.5) < 0.05)


def test_sample_narrow_gaussian():
    g = Grid(256, 4.0)
    psi = make_gaussian_product(g, 0.1, 0.1)
    z = np.array([s.z0 for s in sample_born(psi, 2000, 3)])
    assert np.all(np.abs(z) < 5 * 0.1)


def test_sampling_is_deterministic_and_subsettable(psi0):
    a = sample_born(psi0, 50, 7)
    assert a == sample_born(psi0, 50, 7)
    assert a != sample_born(psi0, 50, 8)
    # sample i depends only on (master_seed, i)
    assert sample_born(psi0, 5, 7)[3] == a[3]
    assert a[3].seed_path == (7, 3)
    with pytest.raises(ConfigurationError):
        sample_born(psi0, 0, 7)


def test_quadrature_nodes_weights(psi0):
    samples, w = quadrature_nodes(psi0, 64)
    assert w.sum() == pytest.approx(1.0, abs=1e-6)
    z = np.array([s.z0 for s in samples])
    exact = np.exp(-(z ** 2).sum(axis=1)) / np.pi
    cell = w / exact
    assert np.allclose(cell, cell[0], rtol=1e-8)


def test_velocity_real_state_is_zero(psi0):
    assert velocity_field(psi0, (0.3, -0.2)) == pytest.approx((0.0, 0.0), abs=1e-12)
    with pytest.raises(OutOfDomainError):
        velocity_field(psi0, (0.0, 20.0))


def test_velocity_along_exact_trajectory():
    t = 1.3
    psi = closed_form_state(t)
    spec = expand_preset("quadratic_pair")
    h = 1e-5
    for x0, y0 in ((1.0, 0.0), (-0.4, 0.9), (0.7, 0.7)):
        X, Y = O.qp_X(t, x0, y0), O.qp_Y(t, x0, y0)
        vx, vy = velocity_field(psi, (X, Y), spec)
        assert vy == pytest.approx(O.qp_Ydot(t, x0, y0), abs=1e-4)
        xdot = (O.qp_X(t + h, x0, y0) - O.qp_X(t - h, x0, y0)) / (2 * h)
        assert vx == pytest.approx(xdot, abs=1e-4)


def test_velocity_mid_drive():
    # bicubic interpolation error of rho_up/rho is 1.7e-4 at dx = 1/8, 2e-5 at dx = 5/64
    g = Grid(256, 10.0)
    oracle = O.SpinSteeringOracle()
    t = 0.15
    X, Y = g.mesh()
    amps = np.zeros((4, 256, 256), complex)
    amps[0] = oracle.f(X) * np.exp(1j * oracle.k * X) * oracle.g(Y - oracle.v * t) / np.sqrt(2)
    amps[1] = oracle.f(X) * oracle.g(Y) / np.sqrt(2)
    psi = JointWaveFunction(g, amps, t)
    spec = expand_preset("spin_steering", {"v": oracle.v, "duration": 0.3})
    for y in (-1.0, 0.5, 1.5, 2.0, 3.2, 4.0):
        _, vy = velocity_field(psi, (0.2, y), spec)
        assert vy == pytest.approx(float(O.ss_vy(y, t, oracle)), abs=1e-4)


def test_trajectory_through_sqrt3():
    g = Grid(128, 10.0)
    T = np.sqrt(3)
    plan = PropagationPlan(T / 1800, T, 10)
    spec = expand_preset("quadratic_pair")
    psi = make_gaussian_product(g, S, S)
    traj = integrate_ensemble(evolve(psi, spec, plan), [InitialSample((1.0, 0.0))], spec)
    assert traj.times[-1] == pytest.approx(T)
    assert traj.positions[0, -1, 1] == pytest.approx(0.5, abs=1e-3)


def test_static_ground_state_trajectories():
    g = Grid(128, 8.0)
    spec = expand_preset("free_product", {"omega_x": 1.0, "omega_y": 1.0})
    psi = make_gaussian_product(g, S, S)
    samples = sample_born(psi, 20, 1)
    traj = integrate_ensemble(evolve(psi, spec, PropagationPlan(1e-3, 1.0, 50)), samples, spec)
    drift = np.abs(traj.positions - traj.positions[:, :1])
    assert drift.max() < 1e-6


def test_determinism_and_threads():
    g = Grid(64, 8.0)
    spec = expand_preset("quadratic_pair")
    psi = make_gaussian_product(g, S, S)
    plan = PropagationPlan(1e-2, 0.5, 5)
    samples = sample_born(psi, 40, 11)
    runs = [integrate_ensemble(evolve(psi, spec, plan), samples, spec, threads=th)
            for th in (1, 1, 2)]
    for other in runs[1:]:
        assert np.array_equal(runs[0].positions, other.positions)
        assert np.array_equal(runs[0].velocities, other.velocities)


def test_substeps_and_validation():
    g = Grid(64, 8.0)
    spec = expand_preset("quadratic_pair")
    psi = make_gaussian_product(g, S, S)
    plan = PropagationPlan(1e-2, 0.5, 10)
    s = [InitialSample((0.5, -0.5))]
    fine = integrate_ensemble(evolve(psi, spec, plan), s, spec, traj_dt=0.025)
    coarse = integrate_ensemble(evolve(psi, spec, plan), s, spec)
    assert np.abs(fine.positions - coarse.positions).max() < 1e-4
    with pytest.raises(ConfigurationError):
        integrate_ensemble(evolve(psi, spec, plan), s, spec, traj_dt=0.03)
    with pytest.raises(ConfigurationError):
        integrate_ensemble(evolve(psi, spec, plan), [], spec)
    with pytest.raises(ConfigurationError):
        integrate_ensemble(evolve(psi, spec, plan), s, spec, time_interpolation="spline")


def _moving_packet():
    g = Grid(64, 8.0)
    spec = expand_preset("custom", {"v_env": "y^2/1000"})
    psi = make_gaussian_product(g, 1.0, 1.0, k=6.0)
    plan = PropagationPlan(1e-2, 1.5, 10, boundary_tolerance=1.0)
    return psi, spec, plan


def test_exclusion_below_quota_is_reported():
    psi, spec, plan = _moving_packet()
    samples = [InitialSample((-3.0, 0.0), index=i) for i in range(1999)]
    samples.append(InitialSample((3.0, 0.0), index=1999))
    traj = integrate_ensemble(evolve(psi, spec, plan), samples, spec)
    assert traj.excluded.sum() == 1 and traj.excluded[-1]
    assert np.isnan(traj.positions[-1, -1]).all()
    assert trajectory_manifest(traj)["excluded_ids"] == [1999]
    assert traj.effective_weights()[-1] == 0


def test_exclusion_quota_aborts():
    psi, spec, plan = _moving_packet()
    samples = [InitialSample((3.0, 0.0), index=i) for i in range(10)]
    with pytest.raises(ExclusionQuotaError):
        integrate_ensemble(evolve(psi, spec, plan), samples, spec)


# ---------------------------------------------------------------------------
# Equivariance


def test_equivariance_initial_samples(psi0, born):
    z = np.array([s.z0 for s in born])
    assert equivariance_statistic(z, psi0) < 0.08


def test_equivariance_exact_oracle_trajectories(born):
    z0 = np.array([s.z0 for s in born])
    t = 2.0
    pts = np.column_stack([O.qp_X(t, z0[:, 0], z0[:, 1]), O.qp_Y(t, z0[:, 0], z0[:, 1])])
    assert equivariance_statistic(pts, closed_form_state(t)) < 0.08


def test_equivariance_detects_wrong_density(born):
    z = np.array([s.z0 for s in born])
    assert equivariance_statistic(z + [1.0, 0.0], make_gaussian_product(Grid(256, 14.0), S, S)) > 0.3


def test_equivariance_evolved_every_preset(equivariance_runs):
    for preset, (times, values) in equivariance_runs.items():
        assert values[0] < 0.08, preset
        assert values[1:].max() < 0.12, preset


def test_equivariance_quadratic_pair_t2(equivariance_runs):
    times, values = equivariance_runs["quadratic_pair"]
    k = int(np.argmin(np.abs(times - 2.0)))
    assert values[k] < 0.12


# ---------------------------------------------------------------------------
# Reference runs


def test_oracle_trajectories_100_samples(qp_mc):
    traj = qp_mc.trajectories
    assert len(traj) == 100 and traj.times[-1] == pytest.approx(3.0)
    z0 = np.array([s.z0 for s in traj.samples])
    ref = O.qp_Y(traj.times, z0[:, :1], z0[:, 1:])
    assert np.abs(traj.positions[:, :, 1] - ref).max() < 1e-3


def test_node_safety(all_runs):
    for name, run in all_runs.items():
        assert run.trajectories.capped_fraction < 1e-4, name


def test_steering_tail_and_basin(steering):
    # compare the extreme samples with the idealized guidance ODE (no free spreading)
    traj = steering.trajectories
    oracle = O.SpinSteeringOracle()
    y0 = traj.positions[:, 0, 1]
    low, high = int(np.argmin(y0)), int(np.argmax(y0))
    assert y0[low] < -2.5 and y0[high] > 2.5
    for i in (low, high):
        sol = solve_ivp(lambda t, y: [float(O.ss_vy(y[0], t, oracle))], (0, traj.times[-1]),
                        [y0[i]], rtol=1e-10, atol=1e-12)
        # spreading of the unit-width packets over 0.3 widens offsets by about 1%
        assert traj.positions[i, -1, 1] == pytest.approx(sol.y[0, -1], abs=0.1)
    # inside the moving packet's basin: drive speed plus free spreading of a unit-width
    # packet, (y - v t) t / (4 sigma^4 + t^2)
    t = traj.times[-1]
    Y = traj.positions[high, -1, 1]
    expect = oracle.v + (Y - oracle.v * t) * t / (4 + t * t)
    assert traj.velocities[high, -1, 1] == pytest.approx(expect, abs=1e-3)


def test_trajectory_csv(tmp_path, qp_mc):
    traj = qp_mc.trajectories
    p = write_trajectories_csv(traj, tmp_path / "t.csv", limit=3)
    lines = p.read_text().splitlines()
    assert lines[0] == TRAJECTORY_HEADER
    T = len(traj.times)
    assert len(lines) == 1 + 3 * T
    rows = np.loadtxt(p, delimiter=",", skiprows=1)
    assert np.array_equal(rows[:T, 0], np.zeros(T)) and rows[T, 0] == 1
    assert np.array_equal(rows[:T, 1], traj.times)
    assert np.array_equal(rows[:T, 2:4], traj.positions[0])
