"""Dynamical systems, signal generators and reduced bases."""

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import lu_factor, orthonormality_error

ORTHONORMALITY_TOL = 1e-10


class StructureError(ValueError):
    """Dimensions of a system or its maps are inconsistent."""


class GeneratorStateError(RuntimeError):
    """A nonlinear generator was queried without a precomputed trajectory."""


class GeneratorAssumptionWarning(UserWarning):
    """A generator violates ``s_v(0) = 0`` or ``r(0) = 0``."""


def _as_matrix(M, name):
    M = np.atleast_2d(np.array(M, dtype=float))
    if M.ndim != 2:
        raise StructureError(f"{name} must be a matrix, got shape {M.shape}")
    return M


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Descriptor system ``E x' = A x + B u``, ``y = C x``."""

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for name in "EABC":
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise StructureError(f"A must be square, got {self.A.shape}")
        if self.E.shape != (n, n):
            raise StructureError(f"E has shape {self.E.shape}, expected {(n, n)}")
        if self.B.shape[0] != n:
            raise StructureError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise StructureError(f"C has {self.C.shape[1]} columns, expected {n}")
        lu, _ = lu_factor(self.E, check_finite=True)
        if _is_singular_lu(lu):
            raise StructureError("descriptor matrix E is singular")
        for name in "EABC":
            getattr(self, name).setflags(write=False)

    @classmethod
    def from_matrices(cls, A, B, C, E=None):
        A = _as_matrix(A, "A")
        if E is None:
            E = np.eye(A.shape[0])
        return cls(E, A, B, C)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def transfer(self, s):
        """Evaluate ``G(s) = C (sE - A)^{-1} B``."""
        return self.C @ np.linalg.solve(s * self.E - self.A, self.B)

    def as_nonlinear(self):
        """Wrap as a :class:`NonlinearSystem` keeping the descriptor matrix."""
        A, B, C = self.A, self.B, self.C
        E = None if np.array_equal(self.E, np.eye(self.n)) else self.E
        return NonlinearSystem(
            n=self.n, m=self.m, p=self.p,
            f=lambda x, u: A @ x + B @ u,
            jac_f=lambda x, u: A.copy(),
            h=lambda x: C @ x,
            linearization=self,
            E=E,
        )


def _is_singular_lu(lu):
    d = np.abs(np.diag(lu))
    return d.min() <= np.finfo(float).eps * lu.shape[0] * max(d.max(), 1e-300)


@dataclass(frozen=True, eq=False)
class NonlinearSystem:
    """State-space model ``E x' = f(x, u)``, ``y = h(x)``.

    `E` is None for explicit systems. `linearization` is only consulted
    for initial guesses.
    """

    n: int
    m: int
    p: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    linearization: Optional[LinearSystem] = None
    E: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("n", "m", "p"):
            if int(getattr(self, name)) < 1:
                raise StructureError(f"{name} must be positive")
        if self.E is not None:
            E = _as_matrix(self.E, "E")
            if E.shape != (self.n, self.n):
                raise StructureError(f"E has shape {E.shape}, expected {(self.n, self.n)}")
            E.setflags(write=False)
            object.__setattr__(self, "E", E)
        lin = self.linearization
        if lin is not None and (lin.n, lin.m, lin.p) != (self.n, self.m, self.p):
            raise StructureError("linearization dimensions do not match the system")

    @property
    def mass(self):
        """Descriptor matrix, identity when the system is explicit."""
        return np.eye(self.n) if self.E is None else self.E


@dataclass(frozen=True)
class ValidationReport:
    equilibrium_ok: bool
    output_ok: bool
    jacobian_ok: bool
    equilibrium_residual: float
    output_residual: float
    jacobian_error: float

    @property
    def passed(self):
        return self.equilibrium_ok and self.output_ok and self.jacobian_ok


def fd_jacobian(fun, x, step=1e-6):
    """Central-difference Jacobian with step ``step * (1 + |x_j|)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        dx = step * (1.0 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = dx
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * dx))
    return np.column_stack(cols)


def jacobian_error(sys, x, u):
    """Relative Frobenius error of ``sys.jac_f`` against central differences."""
    J = np.asarray(sys.jac_f(x, u), dtype=float)
    J_fd = fd_jacobian(lambda z: sys.f(z, u), x)
    return float(np.linalg.norm(J - J_fd) / max(np.linalg.norm(J_fd), np.finfo(float).tiny))


def validate_system(sys, probes=3, seed=0, tol=1e-12, jac_tol=1e-5):
    """Check the standing assumptions on a nonlinear system.

    Verifies ``f(0, 0) = 0``, ``h(0) = 0`` and that the analytic Jacobian
    agrees with central differences at random probe points.

    Raises
    ------
    StructureError
        If `f`, `jac_f` or `h` return arrays of the wrong shape.
    """
    zx, zu = np.zeros(sys.n), np.zeros(sys.m)
    f0 = np.asarray(sys.f(zx, zu), dtype=float)
    if f0.shape != (sys.n,):
        raise StructureError(f"f returns shape {f0.shape}, expected {(sys.n,)}")
    h0 = np.asarray(sys.h(zx), dtype=float)
    if h0.shape != (sys.p,):
        raise StructureError(f"h returns shape {h0.shape}, expected {(sys.p,)}")
    J0 = np.asarray(sys.jac_f(zx, zu))
    if J0.shape != (sys.n, sys.n):
        raise StructureError(f"jac_f returns shape {J0.shape}, expected {(sys.n, sys.n)}")

    rng = np.random.default_rng(seed)
    jac_err = 0.0
    for _ in range(probes):
        x = rng.standard_normal(sys.n)
        u = rng.standard_normal(sys.m)
        jac_err = max(jac_err, jacobian_error(sys, x, u))
    eq = float(np.max(np.abs(f0), initial=0.0))
    out = float(np.max(np.abs(h0), initial=0.0))
    return ValidationReport(eq <= tol, out <= tol, jac_err <= jac_tol, eq, out, jac_err)


# -- signal generators -------------------------------------------------------

def _check_x0(x0):
    x0 = float(x0)
    if x0 == 0.0 or not math.isfinite(x0):
        raise ValueError(f"generator initial condition must be finite and nonzero, got {x0}")
    return x0


def _as_direction(r_dir):
    r = np.atleast_1d(np.array(r_dir, dtype=float))
    if r.ndim != 1:
        raise StructureError(f"direction must be a vector, got shape {r.shape}")
    r.setflags(write=False)
    return r


@dataclass(frozen=True, eq=False)
class NonlinearGenerator:
    """Scalar generator ``x' = s_v(x)``, ``u = r(x)``.

    A trajectory is needed before :func:`eval_generator` can be used:
    either a closed-form `solution` ``t -> x(t)`` or samples attached with
    :meth:`with_samples`.
    """

    s_v: Callable[[float], float]
    r: Callable[[float], np.ndarray]
    x0: float
    solution: Optional[Callable[[float], float]] = None
    samples: Optional[tuple] = None
    label: str = "nonlinear"

    def __post_init__(self):
        object.__setattr__(self, "x0", _check_x0(self.x0))
        s0 = float(self.s_v(0.0))
        r0 = np.asarray(self.r(0.0), dtype=float)
        if abs(s0) > 1e-12 or np.max(np.abs(r0), initial=0.0) > 1e-12:
            warnings.warn(f"generator {self.label!r} has s_v(0)={s0:g}, "
                          f"|r(0)|={np.max(np.abs(r0), initial=0.0):g}; "
                          "equilibrium assumption violated",
                          GeneratorAssumptionWarning, stacklevel=3)

    @property
    def has_trajectory(self):
        return self.solution is not None or self.samples is not None

    def with_samples(self, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.shape != values.shape:
            raise ValueError("times and values must have the same shape")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GeneratorAssumptionWarning)
            return NonlinearGenerator(self.s_v, self.r, self.x0, self.solution,
                                      (times, values), self.label)

    def describe(self):
        return f"{self.label}(x0={self.x0:.17g})"


@dataclass(frozen=True, eq=False)
class LinearGenerator:
    """``x' = sigma x``, ``u = r_dir x``."""

    sigma: float
    r_dir: np.ndarray
    x0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", _check_x0(self.x0))
        object.__setattr__(self, "r_dir", _as_direction(self.r_dir))
        object.__setattr__(self, "sigma", float(self.sigma))

    def describe(self):
        return (f"linear(sigma={self.sigma:.17g}, r={list(self.r_dir)}, "
                f"x0={self.x0:.17g})")


@dataclass(frozen=True, eq=False)
class ZeroGenerator:
    """Constant excitation ``u = r_dir x0``."""

    r_dir: np.ndarray
    x0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x0", _check_x0(self.x0))
        object.__setattr__(self, "r_dir", _as_direction(self.r_dir))

    def describe(self):
        return f"zero(r={list(self.r_dir)}, x0={self.x0:.17g})"


SignalGenerator = (NonlinearGenerator, LinearGenerator, ZeroGenerator)


def generator_maps(gen):
    """Return ``(s_v, r)`` as scalar-argument callables for any variant."""
    if isinstance(gen, NonlinearGenerator):
        return gen.s_v, lambda x: np.asarray(gen.r(x), dtype=float)
    if isinstance(gen, LinearGenerator):
        sigma, r = gen.sigma, gen.r_dir
        return (lambda x: sigma * x), (lambda x: r * x)
    if isinstance(gen, ZeroGenerator):
        r = gen.r_dir
        return (lambda x: 0.0), (lambda x: r * x)
    raise TypeError(f"not a signal generator: {gen!r}")


def eval_generator(gen, t):
    """Generator state and input at time `t`.

    Returns
    -------
    x : float
    u : (m,) ndarray
    """
    t = float(t)
    if isinstance(gen, LinearGenerator):
        x = math.exp(gen.sigma * t) * gen.x0
    elif isinstance(gen, ZeroGenerator):
        x = gen.x0
    elif isinstance(gen, NonlinearGenerator):
        if gen.solution is not None:
            x = float(gen.solution(t))
        elif gen.samples is not None:
            times, values = gen.samples
            hit = np.flatnonzero(np.isclose(times, t, rtol=0.0, atol=1e-12))
            if hit.size:
                x = float(values[hit[0]])
            elif times[0] <= t <= times[-1]:
                x = float(np.interp(t, times, values))
            else:
                raise GeneratorStateError(
                    f"t={t} outside the sampled range [{times[0]}, {times[-1]}]")
        else:
            raise GeneratorStateError(
                "nonlinear generator has no trajectory; run integrate_generator first")
    else:
        raise TypeError(f"not a signal generator: {gen!r}")
    _, r = generator_maps(gen)
    return x, np.asarray(r(x), dtype=float)


@dataclass(frozen=True, eq=False)
class CollocationGrid:
    """Time snapshots at which the generator equations are discretized."""

    times: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        if t.ndim != 1 or t.size < 1:
            raise ValueError("collocation grid needs at least one time point")
        if not np.all(np.isfinite(t)):
            raise ValueError("collocation times must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("collocation times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, t0, t1, K):
        return cls(np.linspace(t0, t1, K))

    def __len__(self):
        return self.times.size


class Method(enum.Enum):
    NLMM = "NLMM"
    POD = "POD"
    KRYLOV = "KRYLOV"


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    """Orthonormal projection basis with provenance.

    `provenance` lists one ``(description, time)`` entry per column of the
    collection the basis was built from, before deflation.
    """

    V: np.ndarray
    method: Method
    provenance: list = field(default_factory=list)
    singular_values: Optional[np.ndarray] = None

    def __post_init__(self):
        V = _as_matrix(self.V, "V")
        if V.shape[1] > V.shape[0]:
            raise ValueError(f"basis has more columns than rows: {V.shape}")
        err = orthonormality_error(V)
        if err > ORTHONORMALITY_TOL:
            raise ValueError(f"basis columns are not orthonormal (error {err:.3e})")
        V.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "method", Method(self.method))

    @property
    def n(self):
        return self.V.shape[0]

    @property
    def r(self):
        return self.V.shape[1]
