import numpy as np
import pytest

from bohmflux import oracles as O
from bohmflux.errors import BoundaryError, ConfigurationError, NormDriftError
from bohmflux.grid import Grid, JointWaveFunction, make_gaussian_product
from bohmflux.hamiltonian import HamiltonianSpec, apply_hamiltonian, expand_preset
from bohmflux.propagator import PropagationPlan, apply_spin_drive, evolve, step

S = 2 ** -0.5


def last(it):
    *_, out = it
    return out


def energy(psi, spec):
    return float(np.vdot(psi.amplitudes, apply_hamiltonian(spec, psi)).real * psi.grid.cell_area)


def marginal_y(psi, comps):
    m = np.sum(np.abs(psi.amplitudes[list(comps)]) ** 2, axis=(0, 1))
    return m / (m.sum() * psi.grid.dy)


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        PropagationPlan(dt=0.0, t_final=1.0)
    with pytest.raises(ConfigurationError):
        PropagationPlan(dt=0.3, t_final=1.0)
    with pytest.raises(ConfigurationError):
        PropagationPlan(dt=0.1, t_final=1.0, snapshot_stride=3)
    with pytest.raises(ConfigurationError):
        PropagationPlan(dt=0.1, t_final=1.0, splitting_order="yoshida")
    p = PropagationPlan(dt=0.01, t_final=1.0, snapshot_stride=10)
    assert p.n_steps == 100 and len(p.snapshot_times) == 11


def test_free_gaussian_spreading():
    g = Grid(256, 16.0)
    psi = last(evolve(make_gaussian_product(g, 1.0, 1.0), HamiltonianSpec(),
                      PropagationPlan(1e-3, 1.0, 1000)))
    X, _ = g.mesh()
    w2 = np.sum(X ** 2 * psi.density_values) * g.cell_area
    assert psi.time == pytest.approx(1.0)
    assert w2 == pytest.approx(1.0 * (1 + 1 / 4), abs=1e-5)


def test_quadratic_pair_fidelity_t1():
    g = Grid(256, 14.0)
    psi = last(evolve(make_gaussian_product(g, S, S), expand_preset("quadratic_pair"),
                      PropagationPlan(1e-3, 1.0, 1000)))
    X, Y = g.mesh()
    ref = JointWaveFunction(g, O.qp_psi(X, Y, 1.0)[None], 1.0)
    fid = abs(ref.inner(psi)) ** 2 / (ref.norm_squared() * psi.norm_squared())
    assert fid > 1 - 1e-6


def test_kinetic_step_exact_for_any_dt():
    g = Grid(128, 16.0)
    psi0 = make_gaussian_product(g, 1.0, 1.0, k=0.5)
    spec = HamiltonianSpec(p_coupling=0.4)
    one = step(psi0, spec, dt=0.8)
    many = last(evolve(psi0, spec, PropagationPlan(0.01, 0.8, 80)))
    assert np.max(np.abs(one.amplitudes - many.amplitudes)) < 1e-12


def test_pp_lambda10_density():
    g = Grid(256, 14.0)
    lam = 10.0
    psi = last(evolve(make_gaussian_product(g, S, S), expand_preset("pp_coupling", {"lambda": lam}),
                      PropagationPlan(1e-3, 0.2, 200)))
    X, Y = g.mesh()
    f = O.pp_f(0.2, lam)
    exact = np.exp(-(X ** 2 + Y ** 2) / f) / (np.pi * f)
    assert f == pytest.approx(5.0)
    assert np.sum(np.abs(psi.density_values - exact)) * g.cell_area < 1e-4
    ref = JointWaveFunction(g, O.pp_psi(X, Y, 0.2, lam)[None], 0.2)
    assert abs(ref.inner(psi)) ** 2 > 1 - 1e-10


def test_harmonic_ground_state_is_stationary():
    # the splitting perturbs the density by ~0.08 dt^2, largest after half a period
    g = Grid(128, 8.0)
    spec = expand_preset("free_product", {"omega_x": 1.0, "omega_y": 1.0})
    psi0 = make_gaussian_product(g, S, S)
    dev = [np.max(np.abs(snap.density_values - psi0.density_values))
           for snap in evolve(psi0, spec, PropagationPlan(2.5e-4, 1.6, 400))]
    assert max(dev) < 1e-8


@pytest.fixture(scope="module")
def qp_history():
    g = Grid(256, 14.0)
    spec = expand_preset("quadratic_pair")
    return spec, list(evolve(make_gaussian_product(g, S, S), spec, PropagationPlan(1e-3, 3.0, 100)))


def test_quadratic_pair_energy_conserved(qp_history):
    spec, snaps = qp_history
    e = np.array([energy(s, spec) for s in snaps])
    assert e[0] == pytest.approx(0.75, abs=1e-9)   # 1/4 + 1/4 kinetic, <(x-y)^2>/4 = 1/4
    assert np.max(np.abs(e - e[0])) < 1e-6


def test_norm_drift_every_preset(qp_history):
    _, snaps = qp_history
    assert max(abs(s.norm_squared() - 1) for s in snaps) < 1e-9
    runs = [
        (Grid(256, 20.0), expand_preset("pp_coupling", {"lambda": 1.0}),
         make_gaussian_product(Grid(256, 20.0), S, S), PropagationPlan(1e-3, 2.0, 100)),
        (Grid(256, 16.0), expand_preset("spin_steering", {"v": 20, "duration": 0.3}),
         make_gaussian_product(Grid(256, 16.0), 1.0, 1.0, k=2.0, spin_preset="steering"),
         PropagationPlan(1e-3, 0.3, 30)),
    ]
    for g, spec, psi0, plan in runs:
        drift = max(abs(s.norm_squared() - 1) for s in evolve(psi0, spec, plan))
        assert drift < 1e-9, spec.name


def test_second_order_convergence():
    g = Grid(128, 8.0)
    spec = expand_preset("quadratic_pair")
    psi0 = make_gaussian_product(g, S, S)
    X, Y = g.mesh()
    ref = O.qp_psi(X, Y, 1.0)
    errs = []
    for dt in (0.1, 0.05, 0.025):
        psi = last(evolve(psi0, spec, PropagationPlan(dt, 1.0, int(round(1 / dt)))))
        errs.append(np.sqrt(np.sum(np.abs(psi.amplitudes[0] - ref) ** 2) * g.cell_area))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios >= 3.4) & (ratios <= 4.6)), ratios


def test_steering_drive_moves_packet_during_evolution():
    g = Grid(256, 16.0)
    spec = expand_preset("spin_steering", {"v": 20, "duration": 0.3})
    psi = last(evolve(make_gaussian_product(g, 1.0, 1.0, k=2.0, spin_preset="steering"),
                      spec, PropagationPlan(1e-3, 0.3, 300)))
    up = marginal_y(psi, (0, 2))
    down = marginal_y(psi, (1, 3))
    assert np.sum(g.y * up) * g.dy == pytest.approx(6.0, abs=1e-6)
    assert np.sum(g.y * down) * g.dy == pytest.approx(0.0, abs=1e-9)


# ---------------------------------------------------------------------------
# Exact spin drive


@pytest.fixture(scope="module")
def steering_state():
    g = Grid(256, 16.0)
    return make_gaussian_product(g, 1.0, 1.0, k=2.0, spin_preset="steering")


def test_spin_drive_displaces_up_branch(steering_state):
    psi = apply_spin_drive(steering_state, 20.0, 0.3)
    g = psi.grid
    up = marginal_y(psi, (0,))
    assert np.sum(g.y * up) * g.dy == pytest.approx(6.0, abs=1e-10)
    assert np.array_equal(psi.amplitudes[1], steering_state.amplitudes[1])
    # marginal overlap at 6 sigma equals its closed form e^{-9}/sqrt(4 pi)
    down = marginal_y(psi, (1,))
    overlap = np.sum(up * down) * g.dy
    assert overlap == pytest.approx(np.exp(-9) / np.sqrt(4 * np.pi), rel=1e-6)
    far = apply_spin_drive(steering_state, 20.0, 0.4)
    assert np.sum(marginal_y(far, (0,)) * down) * g.dy < 1e-6


def test_spin_drive_identity_and_composition(steering_state):
    assert apply_spin_drive(steering_state, 20.0, 0.0) is steering_state
    half = apply_spin_drive(apply_spin_drive(steering_state, 20.0, 0.15), 20.0, 0.15)
    once = apply_spin_drive(steering_state, 20.0, 0.3)
    assert np.max(np.abs(half.amplitudes - once.amplitudes)) < 1e-12


def test_spin_drive_guards(steering_state):
    with pytest.raises(ConfigurationError):
        apply_spin_drive(steering_state, 20.0, 0.6)
    scalar = make_gaussian_product(steering_state.grid, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        apply_spin_drive(scalar, 1.0, 1.0)


# ---------------------------------------------------------------------------
# Aborts


def test_horizon_check_rejects_long_plan():
    g = Grid(256, 14.0)
    with pytest.raises(ConfigurationError, match="horizon"):
        next(evolve(make_gaussian_product(g, S, S), expand_preset("pp_coupling", {"lambda": 10}),
                    PropagationPlan(1e-3, 2.0, 100)))


def test_norm_drift_abort():
    g = Grid(64, 8.0)
    plan = PropagationPlan(1e-2, 0.1, 1, norm_abort=1e-30)
    with pytest.raises(NormDriftError):
        list(evolve(make_gaussian_product(g, S, S), expand_preset("quadratic_pair"), plan))


def test_boundary_abort():
    g = Grid(64, 6.0)
    plan = PropagationPlan(1e-2, 0.1, 1)
    with pytest.raises(BoundaryError):
        list(evolve(make_gaussian_product(g, 1.0, 1.0), expand_preset("quadratic_pair"), plan))
