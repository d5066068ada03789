import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlmm.fhn import FhnParams, build_fhn, test_input
from nlmm.integrate import (GeneratorDivergenceError, IntegrationError, Trajectory,
                            implicit_euler, integrate_generator, simulate,
                            steady_state_match_check)
from nlmm.linear import ShiftSpec, krylov_basis, reduce_linear
from nlmm.systems import CollocationGrid, LinearGenerator, LinearSystem, NonlinearGenerator
from nlmm.verify import euler_step_ratio, random_stable_system


def scalar(lam):
    return (lambda x, u: lam * x), (lambda x, u: np.array([[lam]]))


def test_zero_rhs_constant():
    traj = implicit_euler(lambda x, u: np.zeros(2), lambda x, u: np.zeros((2, 2)),
                          lambda t: None, np.array([1.0, -2.0]), 0.1, 1.0)
    np.testing.assert_array_equal(traj.states, np.tile([1.0, -2.0], (11, 1)))


def test_scalar_decay_closed_form():
    h = 0.1
    traj = implicit_euler(*scalar(-1.0), lambda t: None, np.array([1.0]), h, 2.0)
    expected = (1.0 / (1.0 + h)) ** np.arange(21)
    np.testing.assert_allclose(traj.states[:, 0], expected, rtol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1e3, -1e-3), st.floats(1e-3, 10.0))
def test_unconditional_stability(lam, h):
    traj = implicit_euler(*scalar(lam), lambda t: None, np.array([1.0]), h, 10 * h)
    assert np.all(np.diff(np.abs(traj.states[:, 0])) <= 0)


def test_step_halving_scalar():
    assert 0.4 <= euler_step_ratio() <= 0.6


def test_step_halving_fhn():
    sys = build_fhn(FhnParams(ell=20))
    runs = {h: simulate(sys, test_input, np.zeros(sys.n), h, 5.0).states
            for h in (0.01, 0.005, 0.0025)}
    coarse, mid, fine = runs[0.01], runs[0.005][::2], runs[0.0025][::4]
    ref = 2 * fine - runs[0.005][::2]
    ratio = np.max(np.abs(mid - ref)) / np.max(np.abs(coarse - ref))
    assert 0.4 <= ratio <= 0.6


def test_outputs_match_states(rng):
    sys = random_stable_system(6, 2, 3, rng)
    traj = simulate(sys, lambda t: np.array([np.sin(t), 1.0]), np.zeros(6), 0.05, 1.0)
    np.testing.assert_allclose(traj.outputs, traj.states @ sys.C.T, rtol=1e-13, atol=1e-15)


def test_descriptor_integration(rng):
    sys = random_stable_system(5, 1, 1, rng, descriptor=True)
    traj = simulate(sys, lambda t: np.array([1.0]), np.zeros(5), 0.01, 0.5)
    # one step by hand: (E - h A) x1 = E x0 + h B u
    x1 = np.linalg.solve(sys.E - 0.01 * sys.A, 0.01 * sys.B[:, 0])
    np.testing.assert_allclose(traj.states[1], x1, rtol=1e-10)


def test_newton_failure_raises():
    # z - 1 - (z^2 + 1) = 0 has no real root
    with pytest.raises(IntegrationError) as exc:
        implicit_euler(lambda x, u: x**2 + 1.0, lambda x, u: np.diag(2 * x), lambda t: None,
                       np.array([1.0]), 1.0, 2.0)
    assert exc.value.step == 1 and exc.value.time == 1.0


def test_bad_step():
    with pytest.raises(ValueError):
        implicit_euler(*scalar(-1.0), lambda t: None, np.array([1.0]), 0.0, 1.0)
    with pytest.raises(ValueError):
        implicit_euler(*scalar(-1.0), lambda t: None, np.array([1.0]), 0.5, 0.1)


def test_trajectory_csv_roundtrip(tmp_path, rng):
    traj = Trajectory(np.linspace(0, 1, 5), rng.standard_normal((5, 3)), rng.standard_normal((5, 2)))
    traj.to_csv(tmp_path / "y.csv")
    traj.to_csv(tmp_path / "x.csv", kind="states")
    text = (tmp_path / "y.csv").read_bytes()
    assert text.startswith(b"t,y1,y2\n") and b"\r" not in text
    y = Trajectory.from_csv(tmp_path / "y.csv")
    x = Trajectory.from_csv(tmp_path / "x.csv")
    np.testing.assert_array_equal(y.outputs, traj.outputs)
    np.testing.assert_array_equal(x.states, traj.states)
    assert y.states is None and x.outputs is None


def test_trajectory_rejects_nonuniform():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0, 3.0]), None, None)
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0]), np.array([[1.0], [np.nan]]), None)


# -- generators ---------------------------------------------------------------

def test_generator_constant():
    gen = NonlinearGenerator(lambda x: 0.0 * x, lambda x: np.array([x]), 0.7)
    np.testing.assert_allclose(integrate_generator(gen, CollocationGrid([0.5, 1.0, 3.0])), 0.7)


def test_generator_affine_matches_closed_form():
    gen = NonlinearGenerator(lambda x: x + 0.3, lambda x: np.array([x, 1.0]), -0.29)
    grid = CollocationGrid.uniform(0.0, 5.0, 41)
    vals = integrate_generator(gen, grid)
    exact = np.exp(grid.times) * (-0.29 + 0.3) - 0.3
    assert np.max(np.abs(vals - exact)) <= 1e-4
    assert vals[-1] == pytest.approx(1.184, abs=1e-3)


def test_generator_decay():
    gen = NonlinearGenerator(lambda x: -x, lambda x: np.array([x]), 1.0)
    val = integrate_generator(gen, CollocationGrid([1.0]))[0]
    assert val == pytest.approx(np.exp(-1.0), abs=1e-4)


def test_generator_divergence():
    gen = NonlinearGenerator(lambda x: x**2, lambda x: np.array([x]), 1.0)
    with pytest.raises(GeneratorDivergenceError) as exc:
        integrate_generator(gen, CollocationGrid([2.0]))
    assert exc.value.time <= 1.05


# -- steady state -------------------------------------------------------------

@pytest.fixture
def linear_pair(rng):
    sys = random_stable_system(20, 2, 2, rng)
    gen = LinearGenerator(-0.5, [1.0, -0.5])
    return sys, gen


def test_steady_state_krylov(linear_pair):
    sys, gen = linear_pair
    V = krylov_basis(sys, ShiftSpec([-0.5])).V
    dev = steady_state_match_check(sys, reduce_linear(sys, V), gen, V, 10.0, 1e-2)
    assert dev <= 1e-6


def test_steady_state_identity(linear_pair):
    sys, gen = linear_pair
    V = np.eye(sys.n)
    assert steady_state_match_check(sys, sys, gen, V, 2.0, 1e-2) <= 1e-14


def test_steady_state_random_basis_fails(linear_pair, rng):
    sys, gen = linear_pair
    V, _ = np.linalg.qr(rng.standard_normal((sys.n, 2)))
    assert steady_state_match_check(sys, reduce_linear(sys, V), gen, V, 10.0, 1e-2) > 1e-3


def test_steady_state_nonlinear_identity():
    sys = build_fhn(FhnParams(ell=10))
    from nlmm.galerkin import reduce_nonlinear
    gen = LinearGenerator(-1.0, [0.5, 0.0], x0=0.2)
    rom = reduce_nonlinear(sys, np.eye(sys.n))
    assert steady_state_match_check(sys, rom, gen, np.eye(sys.n), 1.0, 1e-2) <= 1e-12


def test_simulation_counter(rng):
    from nlmm.integrate import simulation_counts
    from nlmm.galerkin import reduce_nonlinear
    sys = build_fhn(FhnParams(ell=5))
    before = simulation_counts.copy()
    simulate(sys, test_input, np.zeros(sys.n), 0.1, 0.2)
    simulate(reduce_nonlinear(sys, np.eye(sys.n)[:, :3]), test_input, np.zeros(3), 0.1, 0.2)
    assert simulation_counts["full"] == before["full"] + 1
    assert simulation_counts["reduced"] == before["reduced"] + 1
    assert isinstance(LinearSystem, type)
