import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlmm.core import (EmptyBasisError, NlmmOptions, NonFiniteError, SingularJacobianError,
                       initial_guess_linearized, jacobian_nsg, jacobian_zsg, newton_solve,
                       nlmm_basis, residual_nsg, residual_zsg, solve_column)
from nlmm.fhn import FhnParams, build_fhn, paper_generator
from nlmm.integrate import simulate
from nlmm.linalg import RankWarning, orthonormality_error, projector_distance
from nlmm.linear import ShiftSpec, krylov_basis
from nlmm.systems import (CollocationGrid, LinearGenerator, LinearSystem, Method,
                          NonlinearGenerator, NonlinearSystem, ZeroGenerator, fd_jacobian)
from nlmm.verify import cubic_test_system, random_stable_system


def quiet_paper_generator():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return paper_generator()


# -- residuals and Jacobians ------------------------------------------------------

def test_residual_zero_at_equilibrium():
    sys = cubic_test_system()
    gen = NonlinearGenerator(lambda x: -x, lambda x: np.zeros(1), 1.0,
                             solution=lambda t: np.exp(-t))
    np.testing.assert_array_equal(residual_nsg(sys, gen, 0.4, np.zeros(3)), 0.0)


def test_linear_residual_formula(stable_system):
    sys, x = stable_system, 0.8
    gen = LinearGenerator(0.5, [1.0, -2.0])
    v = np.arange(10.0)
    expected = (sys.A - 0.5 * np.eye(10)) @ v * x + sys.B @ gen.r_dir * x
    np.testing.assert_allclose(residual_nsg(sys.as_nonlinear(), gen, x, v), expected, rtol=1e-13)
    root = np.linalg.solve(0.5 * np.eye(10) - sys.A, sys.B @ gen.r_dir)
    assert np.max(np.abs(residual_nsg(sys.as_nonlinear(), gen, x, root))) <= 1e-12


def test_linear_jacobian_constant(stable_system):
    gen = LinearGenerator(0.5, [1.0, 0.0])
    nl = stable_system.as_nonlinear()
    J1 = jacobian_nsg(nl, gen, 0.8, np.zeros(10))
    J2 = jacobian_nsg(nl, gen, 0.8, np.ones(10))
    np.testing.assert_allclose(J1, (stable_system.A - 0.5 * np.eye(10)) * 0.8, rtol=1e-14)
    np.testing.assert_array_equal(J1, J2)


def test_jacobian_at_zero_snapshot():
    sys = cubic_test_system()
    gen = NonlinearGenerator(lambda x: x + 0.3, lambda x: np.array([x]), 1.0,
                             solution=lambda t: t)
    np.testing.assert_allclose(jacobian_nsg(sys, gen, 0.0, np.ones(3)), -0.3 * np.eye(3))


def test_descriptor_residual_uses_E(rng):
    lin = random_stable_system(6, 1, 1, rng, descriptor=True)
    nl = NonlinearSystem(6, 1, 1, lambda x, u: lin.A @ x + lin.B @ u, lambda x, u: lin.A,
                         lambda x: lin.C @ x, E=lin.E)
    gen = LinearGenerator(0.9, [1.0])
    v = np.linalg.solve(0.9 * lin.E - lin.A, lin.B[:, 0])
    assert np.max(np.abs(residual_nsg(nl, gen, 1.3, v))) <= 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_fhn_jacobian_nsg_matches_fd(seed):
    rng = np.random.default_rng(seed)
    sys = build_fhn(FhnParams(ell=15))
    gen = quiet_paper_generator()
    x = rng.uniform(-0.29, 1.18)
    v = rng.uniform(-1, 1, sys.n)
    J = jacobian_nsg(sys, gen, x, v)
    J_fd = fd_jacobian(lambda w: residual_nsg(sys, gen, x, w), v)
    assert np.linalg.norm(J - J_fd) / np.linalg.norm(J_fd) <= 1e-5


def test_non_finite_residual_reports_component():
    sys = NonlinearSystem(2, 1, 1, lambda x, u: np.array([0.0, np.inf]),
                          lambda x, u: np.eye(2), lambda x: x[:1])
    with pytest.raises(NonFiniteError) as exc:
        residual_nsg(sys, LinearGenerator(1.0, [1.0]), 1.0, np.zeros(2))
    assert exc.value.index == 1


# -- zero generator ---------------------------------------------------------------

def test_zero_generator_linear_is_zero_shift(stable_system):
    gen = ZeroGenerator([1.0, 0.5])
    v = -np.linalg.solve(stable_system.A, stable_system.B @ gen.r_dir)
    assert np.max(np.abs(residual_zsg(stable_system.as_nonlinear(), gen, v))) <= 1e-12


def test_zero_generator_equilibrium_vs_simulation():
    sys = cubic_test_system()
    gen = ZeroGenerator([1.5], x0=2.0)
    col = solve_column(sys, gen, gen.x0, None, NlmmOptions())
    assert col.converged
    traj = simulate(sys, lambda t: gen.r_dir * gen.x0, np.zeros(3), 0.05, 40.0)
    assert np.max(np.abs(col.v * gen.x0 - traj.states[-1])) <= 1e-6
    # plugging x_inf / x0 back in gives a vanishing residual
    v = traj.states[-1] / gen.x0
    assert np.max(np.abs(residual_zsg(sys, gen, v))) <= 1e-8
    assert jacobian_zsg(sys, gen, v).shape == (3, 3)


def test_zero_generator_scaling():
    sys = cubic_test_system()
    v1 = solve_column(sys, ZeroGenerator([1.5], 1.0), 1.0, None, NlmmOptions()).v
    v2 = solve_column(sys, ZeroGenerator([0.75], 2.0), 2.0, None, NlmmOptions()).v
    np.testing.assert_allclose(v2, v1 / 2.0, rtol=1e-9)


def test_residual_zsg_type_check(stable_system):
    with pytest.raises(TypeError):
        residual_zsg(stable_system.as_nonlinear(), LinearGenerator(1.0, [1.0, 0.0]), np.zeros(10))


# -- Newton -----------------------------------------------------------------------

def test_newton_affine_one_step(rng):
    A = rng.standard_normal((6, 6)) + 6 * np.eye(6)
    b = rng.standard_normal(6)
    res = newton_solve(lambda v: A @ v - b, lambda v: A, np.zeros(6), tol=1e-12)
    assert res.converged and res.iterations == 1
    np.testing.assert_allclose(res.v, np.linalg.solve(A, b), rtol=1e-12)


def test_newton_scalar_square_root():
    res = newton_solve(lambda v: v**2 - 4.0, lambda v: np.diag(2 * v), np.array([3.0]), tol=1e-12)
    assert res.converged and res.iterations <= 6
    assert res.v[0] == pytest.approx(2.0, rel=1e-14)


def test_newton_reports_non_convergence():
    res = newton_solve(lambda v: v**2 + 1.0, lambda v: np.diag(2 * v), np.array([0.5]),
                       max_iter=10)
    assert not res.converged and res.iterations == 10
    assert "maximum iterations" in res.message


def test_newton_singular_jacobian():
    with pytest.raises(SingularJacobianError):
        newton_solve(lambda v: v + 1.0, lambda v: np.full((2, 2), np.nan), np.zeros(2))


def test_newton_line_search_rescues_arctan():
    F = lambda v: np.arctan(v)  # noqa: E731
    J = lambda v: np.diag(1.0 / (1.0 + v**2))  # noqa: E731
    with np.errstate(over="ignore"):
        plain = newton_solve(F, J, np.array([2.0]), max_iter=20)
    damped = newton_solve(F, J, np.array([2.0]), max_iter=20, line_search=True)
    assert not plain.converged
    assert damped.converged and abs(damped.v[0]) <= 1e-8


def test_initial_guess_linearized_identity():
    lin = LinearSystem.from_matrices(-np.eye(3), np.eye(3), np.eye(3))
    np.testing.assert_allclose(initial_guess_linearized(lin, 0.0, [1.0, 0.0, 0.0]), [1, 0, 0])


def test_initial_guess_is_krylov_direction(stable_system):
    v0 = initial_guess_linearized(stable_system, 0.7, [0.0, 1.0])
    V = krylov_basis(stable_system, ShiftSpec([0.7], tangential_dirs=[[0.0, 1.0]])).V
    assert projector_distance(v0[:, None] / np.linalg.norm(v0), V) <= 1e-12


def test_linear_fom_newton_from_linearized_guess(stable_system):
    nl = stable_system.as_nonlinear()
    col = solve_column(nl, LinearGenerator(0.7, [0.0, 1.0]), 1.0, None, NlmmOptions())
    assert col.converged and col.iterations <= 1


# -- options ----------------------------------------------------------------------

def test_options_validation():
    with pytest.raises(ValueError):
        NlmmOptions(newton_tol=0.0)
    with pytest.raises(ValueError):
        NlmmOptions(newton_max_iter=0)
    with pytest.raises(ValueError):
        NlmmOptions(r_defl=3, sv_tol=1e-3)
    with pytest.raises(ValueError):
        NlmmOptions(initial_guess_policy="random")


def test_options_from_mapping():
    opts = NlmmOptions.from_mapping({"newton_tol": "1e-9", "r_defl": "22", "line_search": "yes",
                                     "orthogonalize_inline": "false", "unknown": "x"})
    assert opts.newton_tol == 1e-9 and opts.r_defl == 22
    assert opts.line_search and not opts.orthogonalize_inline
    with pytest.raises(ValueError):
        NlmmOptions.from_mapping({"line_search": "maybe"})


# -- basis construction -----------------------------------------------------------

def test_linear_case_equivalence(rng):
    lin = random_stable_system(50, 2, 2, rng)
    shifts = [0.1, 0.4, 1.0, 2.5, 6.0, 15.0]
    gens = [LinearGenerator(s, e) for s in shifts for e in np.eye(2)]
    basis, report = nlmm_basis(lin.as_nonlinear(), gens, CollocationGrid([0.0]))
    assert basis.method is Method.NLMM
    assert projector_distance(basis.V, krylov_basis(lin, ShiftSpec(shifts)).V) <= 1e-8


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(range(5)))
def test_generator_permutation_invariance(seed, perm):
    lin = random_stable_system(12, 1, 1, np.random.default_rng(seed))
    gens = [LinearGenerator(s, [1.0]) for s in (0.2, 0.5, 1.0, 3.0, 7.0)]
    V1 = nlmm_basis(lin.as_nonlinear(), gens, CollocationGrid([0.0]))[0].V
    V2 = nlmm_basis(lin.as_nonlinear(), [gens[i] for i in perm], CollocationGrid([0.0]))[0].V
    assert projector_distance(V1, V2) <= 1e-10


def test_zero_generator_basis_is_equilibrium_direction():
    sys = cubic_test_system()
    gen = ZeroGenerator([1.5], x0=2.0)
    basis, report = nlmm_basis(sys, [gen], CollocationGrid.uniform(0.0, 1.0, 5))
    assert len(report.columns) == 1
    x_inf = report.columns[0].v * 2.0
    assert projector_distance(basis.V, (x_inf / np.linalg.norm(x_inf))[:, None]) <= 1e-12


@pytest.fixture(scope="module")
def fhn_small():
    return build_fhn(FhnParams(ell=30))


def test_fhn_columns_satisfy_residual(fhn_small):
    gen = quiet_paper_generator()
    grid = CollocationGrid.uniform(0.0, 5.0, 11)
    basis, report = nlmm_basis(fhn_small, [gen], grid, NlmmOptions(newton_max_iter=100))
    assert not report.failed
    for c in report.columns:
        assert np.max(np.abs(residual_nsg(fhn_small, gen, c.x_val, c.v))) <= 1e-8
    assert orthonormality_error(basis.V) <= 1e-10
    assert report.columns[0].x_val == -0.29


def test_fhn_deflation_monotone(fhn_small):
    grid = CollocationGrid.uniform(0.0, 5.0, 11)
    basis, report = nlmm_basis(fhn_small, [quiet_paper_generator()], grid,
                               NlmmOptions(r_defl=5, newton_max_iter=100))
    assert basis.r == 5 and report.retained == 5
    assert np.all(np.diff(report.singular_values) <= 0)


def test_determinism_and_threads(fhn_small):
    grid = CollocationGrid.uniform(0.0, 5.0, 9)
    gens = [quiet_paper_generator(), LinearGenerator(-0.5, [0.5, 0.0], 0.3)]
    a = nlmm_basis(fhn_small, gens, grid, NlmmOptions(r_defl=8, newton_max_iter=100))[0].V
    b = nlmm_basis(fhn_small, gens, grid, NlmmOptions(r_defl=8, newton_max_iter=100))[0].V
    c = nlmm_basis(fhn_small, gens, grid, NlmmOptions(r_defl=8, newton_max_iter=100,
                                                      threads=3))[0].V
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)


def test_inline_gram_schmidt_same_span(rng):
    lin = random_stable_system(20, 1, 1, rng).as_nonlinear()
    gens = [LinearGenerator(s, [1.0]) for s in (0.3, 1.0, 3.0)]
    a = nlmm_basis(lin, gens, CollocationGrid([0.0]))[0]
    b = nlmm_basis(lin, gens, CollocationGrid([0.0]), NlmmOptions(orthogonalize_inline=True))[0]
    assert projector_distance(a.V, b.V) <= 1e-10


def test_r_defl_beyond_rank_warns(rng):
    lin = random_stable_system(20, 1, 1, rng).as_nonlinear()
    gens = [LinearGenerator(s, [1.0]) for s in (0.3, 1.0)]
    with pytest.warns(RankWarning):
        basis, _ = nlmm_basis(lin, gens, CollocationGrid.uniform(0, 1, 3), NlmmOptions(r_defl=5))
    assert basis.r == 2


def test_failed_columns_dropped_and_reported():
    sys = cubic_test_system()
    # s_v(x) = x - 1 vanishes at the snapshot x = 1
    gen = NonlinearGenerator(lambda x: x - 1.0, lambda x: np.array([x - 1.0]), 2.0,
                             samples=([0.0, 1.0], [2.0, 1.0]))
    basis, report = nlmm_basis(sys, [gen], CollocationGrid([0.0, 1.0]))
    assert len(report.failed) == 1 and report.failed[0].k == 1
    assert basis.r == 1
    assert "FAILED" in report.to_text()


def test_all_columns_failed():
    sys = cubic_test_system()
    with pytest.raises(EmptyBasisError):
        nlmm_basis(sys, [LinearGenerator(-1.0, [1.0])], CollocationGrid([0.0]),
                   NlmmOptions(newton_max_iter=1, initial_guess_policy="zeros",
                               newton_tol=1e-300))


def test_previous_neighbor_policy(fhn_small):
    grid = CollocationGrid.uniform(0.0, 2.0, 5)
    basis, report = nlmm_basis(fhn_small, [quiet_paper_generator()], grid,
                               NlmmOptions(initial_guess_policy="previous_neighbor",
                                           newton_max_iter=100))
    assert not report.failed


def test_nonlinear_generator_integrated_without_full_simulation(fhn_small):
    from nlmm.integrate import simulation_counts
    gen = NonlinearGenerator(lambda x: -x + 0.1, lambda x: np.array([x, 1.0]), -0.2)
    before = dict(simulation_counts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        nlmm_basis(fhn_small, [gen], CollocationGrid.uniform(0.0, 2.0, 4))
    assert simulation_counts["full"] == before.get("full", 0)
    assert simulation_counts["generator"] == before.get("generator", 0) + 1
