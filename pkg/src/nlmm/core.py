"""Simulation-free nonlinear moment matching.

Each projection column solves, for one generator and one collocation
time, the algebraic equation

    0 = f(v x, r(x)) - E v s_v(x),    x = x_r^v(t*_k),

with Newton's method. The collected columns are optionally
Gram-Schmidt orthogonalized on the fly and finally deflated by SVD.
Solving column by column does not make the coupled matrix equation hold;
that is inherent to the linear projection ansatz.
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg as la

from .linalg import (DEFLATION_TOL, RankWarning, gram_schmidt_append, lu_factor, orthonormalize,
                     svd_deflate)
from .systems import (Method, NonlinearGenerator, ReducedBasis, ZeroGenerator,
                      eval_generator, generator_maps, _is_singular_lu)

log = logging.getLogger(__name__)

GUESS_POLICIES = ("zeros", "linearized", "previous_neighbor")


class NonFiniteError(ArithmeticError):
    """Residual or Jacobian evaluation produced NaN or Inf."""

    def __init__(self, what, index):
        super().__init__(f"non-finite {what} at component {index}")
        self.index = index


class SingularJacobianError(np.linalg.LinAlgError):
    pass


class EmptyBasisError(RuntimeError):
    """Every column failed, nothing to build a basis from."""


@dataclass(frozen=True)
class NlmmOptions:
    """Settings for :func:`nlmm_basis`.

    `initial_guess_policy` None selects ``linearized`` when the system has
    a linearization, else ``previous_neighbor``. Newton takes full steps
    unless `line_search` is set; residual-decrease damping stalls on
    stiff problems whose plain iterates grow before converging.
    """

    newton_tol: float = 1e-8
    newton_max_iter: int = 50
    r_defl: Optional[int] = None
    sv_tol: Optional[float] = None
    orthogonalize_inline: bool = False
    initial_guess_policy: Optional[str] = None
    line_search: bool = False
    max_halvings: int = 30
    threads: int = 1

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        if self.r_defl is not None and self.sv_tol is not None:
            raise ValueError("set at most one of r_defl and sv_tol")
        if self.r_defl is not None and self.r_defl < 1:
            raise ValueError("r_defl must be positive")
        if self.sv_tol is not None and not 0 < self.sv_tol < 1:
            raise ValueError("sv_tol must lie in (0, 1)")
        if self.initial_guess_policy not in (None,) + GUESS_POLICIES:
            raise ValueError(f"unknown initial guess policy {self.initial_guess_policy!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @classmethod
    def from_mapping(cls, d):
        """Build from string-valued config entries, ignoring unknown keys."""
        conv = {"newton_tol": float, "newton_max_iter": int, "r_defl": int, "sv_tol": float,
                "orthogonalize_inline": _parse_bool, "initial_guess_policy": str,
                "line_search": _parse_bool, "max_halvings": int, "threads": int}
        kw = {k: conv[k](v) for k, v in d.items() if k in conv and v not in (None, "")}
        return cls(**kw)


def _parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class ColumnResult:
    i: int
    k: int
    t: float
    x_val: float
    v: Optional[np.ndarray]
    converged: bool
    iterations: int
    residual: float
    message: str = ""


@dataclass
class NlmmReport:
    columns: list = field(default_factory=list)
    pre_deflation: int = 0
    singular_values: Optional[np.ndarray] = None
    retained: int = 0

    @property
    def failed(self):
        return [c for c in self.columns if not c.converged]

    @property
    def max_iterations(self):
        return max((c.iterations for c in self.columns if c.converged), default=0)

    def to_text(self):
        lines = [f"columns {len(self.columns)}",
                 f"converged {len(self.columns) - len(self.failed)}",
                 f"pre_deflation {self.pre_deflation}",
                 f"retained {self.retained}"]
        for c in self.columns:
            status = "ok" if c.converged else "FAILED"
            lines.append(f"column i={c.i} k={c.k} t={c.t:.17g} x={c.x_val:.17g} "
                         f"iterations={c.iterations} residual={c.residual:.3e} {status}"
                         + (f" ({c.message})" if c.message else ""))
        if self.singular_values is not None:
            lines.append("singular_values " + " ".join(f"{s:.17g}" for s in self.singular_values))
        return "\n".join(lines) + "\n"


def _check_finite(a, what):
    bad = np.flatnonzero(~np.isfinite(a))
    if bad.size:
        raise NonFiniteError(what, int(bad[0]))
    return a


def residual_nsg(sys, gen, x_val, v):
    """``f(v x, r(x)) - E v s_v(x)`` at generator value ``x = x_val``."""
    s_v, r = generator_maps(gen)
    v = np.asarray(v, dtype=float)
    s = s_v(x_val)
    Ev = v if sys.E is None else sys.E @ v
    return _check_finite(np.asarray(sys.f(v * x_val, r(x_val)), dtype=float) - Ev * s, "residual")


def jacobian_nsg(sys, gen, x_val, v):
    """``J_f(v x, r(x)) x - E s_v(x)``."""
    s_v, r = generator_maps(gen)
    v = np.asarray(v, dtype=float)
    J = np.asarray(sys.jac_f(v * x_val, r(x_val)), dtype=float) * x_val
    J = J - s_v(x_val) * sys.mass
    return _check_finite(J.ravel(), "jacobian").reshape(J.shape)


def residual_zsg(sys, gen, v):
    """``f(v x0, r_dir x0)``; its root satisfies ``v x0 = x_inf``."""
    if not isinstance(gen, ZeroGenerator):
        raise TypeError("residual_zsg needs a ZeroGenerator")
    return residual_nsg(sys, gen, gen.x0, v)


def jacobian_zsg(sys, gen, v):
    return jacobian_nsg(sys, gen, gen.x0, v)


@dataclass
class NewtonResult:
    v: np.ndarray
    converged: bool
    iterations: int
    residual: float
    message: str = ""


def _solve(J, b):
    lu = lu_factor(J, check_finite=False)
    if not _is_singular_lu(lu[0]):
        x = la.lu_solve(lu, b, check_finite=False)
        if np.all(np.isfinite(x)):
            return x
    # damped fallback: J + mu I with growing mu
    scale = max(np.linalg.norm(J, 1), 1.0)
    for mu in scale * np.logspace(-10, -4, 4):
        Jd = J + mu * np.eye(J.shape[0])
        lu = lu_factor(Jd, check_finite=False)
        if not _is_singular_lu(lu[0]):
            x = la.lu_solve(lu, b, check_finite=False)
            if np.all(np.isfinite(x)):
                return x
    raise SingularJacobianError("Jacobian singular after damping attempts")


def newton_solve(residual, jacobian, v0, tol=1e-8, max_iter=50, line_search=False,
                 max_halvings=30):
    """Newton-Raphson, optionally with backtracking on ``||F||_inf``.

    With `line_search`, the step length is halved (at most `max_halvings`
    times) until the residual norm decreases.

    Returns a :class:`NewtonResult`; non-convergence is reported, not
    raised. A Jacobian that stays singular after damping raises
    :class:`SingularJacobianError`.
    """
    v = np.array(v0, dtype=float)
    F = np.asarray(residual(v), dtype=float)
    norm = np.max(np.abs(F), initial=0.0)
    for it in range(max_iter + 1):
        if norm <= tol:
            return NewtonResult(v, True, it, float(norm))
        if it == max_iter:
            break
        delta = _solve(np.asarray(jacobian(v), dtype=float), -F)
        alpha = 1.0
        v_new = v + delta
        F_new = np.asarray(residual(v_new), dtype=float)
        norm_new = np.max(np.abs(F_new), initial=0.0)
        if line_search:
            halvings = 0
            while not norm_new < norm and halvings < max_halvings:
                alpha *= 0.5
                halvings += 1
                v_new = v + alpha * delta
                F_new = np.asarray(residual(v_new), dtype=float)
                norm_new = np.max(np.abs(F_new), initial=0.0)
            if not norm_new < norm:
                return NewtonResult(v, False, it + 1, float(norm), "line search failed")
        v, F, norm = v_new, F_new, norm_new
    return NewtonResult(v, False, max_iter, float(norm), "maximum iterations reached")


def initial_guess_linearized(lin, sigma, r_dir):
    """Linear Krylov direction ``(sigma E - A)^{-1} B r_dir``."""
    M = sigma * lin.E - lin.A
    lu = lu_factor(M)
    if _is_singular_lu(lu[0]):
        raise np.linalg.LinAlgError(f"sigma*E - A singular at sigma={sigma}")
    return la.lu_solve(lu, lin.B @ np.asarray(r_dir, dtype=float))


def _linearized_guess(sys, gen, x_val):
    # the exact column solution of the linearized model at this snapshot:
    # (s_v(x)/x E - A) v = B r(x)/x
    s_v, r = generator_maps(gen)
    return initial_guess_linearized(sys.linearization, s_v(x_val) / x_val,
                                    np.asarray(r(x_val)) / x_val)


def solve_column(sys, gen, x_val, v0, opts):
    """Solve one column equation; failures are returned, not raised."""
    s_v, _ = generator_maps(gen)
    res = ColumnResult(-1, -1, float("nan"), float(x_val), None, False, 0, float("inf"))
    if x_val == 0.0:
        res.message = "generator value is zero, column equation is degenerate"
        return res
    if isinstance(gen, NonlinearGenerator) and s_v(x_val) == 0.0:
        res.message = "s_v vanishes at this snapshot, column not determined"
        return res
    if v0 is None:
        v0 = _default_guess(sys, gen, x_val)
    try:
        out = newton_solve(lambda v: residual_nsg(sys, gen, x_val, v),
                           lambda v: jacobian_nsg(sys, gen, x_val, v),
                           v0, opts.newton_tol, opts.newton_max_iter,
                           opts.line_search, opts.max_halvings)
    except (NonFiniteError, SingularJacobianError) as exc:
        res.message = str(exc)
        return res
    res.v, res.converged, res.iterations, res.residual = out.v, out.converged, out.iterations, out.residual
    res.message = out.message
    return res


def _default_guess(sys, gen, x_val):
    if sys.linearization is not None:
        try:
            return _linearized_guess(sys, gen, x_val)
        except np.linalg.LinAlgError:
            pass
    return np.zeros(sys.n)


def _policy(sys, opts):
    if opts.initial_guess_policy is not None:
        if opts.initial_guess_policy == "linearized" and sys.linearization is None:
            raise ValueError("linearized initial guesses need sys.linearization")
        return opts.initial_guess_policy
    return "linearized" if sys.linearization is not None else "previous_neighbor"


def _generator_values(gen, times):
    from .integrate import integrate_generator

    if isinstance(gen, NonlinearGenerator) and not gen.has_trajectory:
        gen = gen.with_samples(times, integrate_generator(gen, times))
    return gen, [eval_generator(gen, t)[0] for t in times]


def nlmm_basis(sys, gens, grid, opts=None):
    """Projection basis from nonlinear moment matching.

    Columns are solved in lexicographic (generator, snapshot) order.
    Columns whose Newton iteration fails are dropped and recorded in the
    report. Nonlinear generators without a trajectory are integrated
    (scalar ODE only; the full model is never simulated).

    Parameters
    ----------
    sys : NonlinearSystem
    gens : list of generators
    grid : CollocationGrid
        Snapshot times. Zero generators are time-independent and use a
        single column regardless of the grid.
    opts : NlmmOptions, optional

    Returns
    -------
    basis : ReducedBasis
    report : NlmmReport

    Raises
    ------
    EmptyBasisError
        If no column converged.
    """
    opts = opts or NlmmOptions()
    policy = _policy(sys, opts)
    tasks = []
    for i, gen in enumerate(gens):
        times = [0.0] if isinstance(gen, ZeroGenerator) else list(grid.times)
        gen, xs = _generator_values(gen, times)
        tasks.append((i, gen, times, xs))

    if opts.threads > 1 and not opts.orthogonalize_inline and policy != "previous_neighbor":
        with ThreadPoolExecutor(opts.threads) as pool:
            futures = [pool.submit(_solve_generator, sys, t, policy, opts) for t in tasks]
            per_gen = [fut.result() for fut in futures]
    else:
        per_gen = [_solve_generator(sys, t, policy, opts) for t in tasks]

    report = NlmmReport()
    raw, prov = [], []
    for (i, gen, times, xs), cols in zip(tasks, per_gen):
        for c in cols:
            report.columns.append(c)
            if c.converged:
                raw.append(c.v)
                prov.append((gen.describe(), c.t))
            else:
                log.warning("column i=%d k=%d dropped: %s", c.i, c.k, c.message)
    if not raw:
        raise EmptyBasisError("no NLMM column converged")
    V = np.column_stack(raw)
    report.pre_deflation = V.shape[1]

    if opts.orthogonalize_inline:
        keep, Q = [], np.empty((sys.n, 0))
        for j in range(V.shape[1]):
            W, flagged = gram_schmidt_append(np.column_stack([Q, V[:, j]]), Q.shape[1])
            if not flagged:
                Q = W
                keep.append(j)
        V, prov = Q, [prov[j] for j in keep]

    if opts.r_defl is not None or opts.sv_tol is not None:
        # column scale is arbitrary (v ~ 1/x near generator zero crossings)
        V = V / np.linalg.norm(V, axis=0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RankWarning)
            U, s = svd_deflate(V, opts.r_defl, opts.sv_tol)
        for w in caught:
            warnings.warn(w.message, RankWarning, stacklevel=2)
        report.singular_values = s[:U.shape[1]]
        V = U
    elif not opts.orthogonalize_inline:
        V, _, kept = orthonormalize(V, DEFLATION_TOL)
        prov = [prov[j] for j in kept]
    report.retained = V.shape[1]
    return ReducedBasis(V, Method.NLMM, prov, report.singular_values), report


def _solve_generator(sys, task, policy, opts):
    i, gen, times, xs = task
    cols, prev = [], None
    for k, (t, x) in enumerate(zip(times, xs)):
        if policy == "zeros":
            v0 = np.zeros(sys.n)
        elif policy == "linearized":
            v0 = None
        else:
            v0 = prev if prev is not None else _fallback_guess(sys, gen, x)
        c = solve_column(sys, gen, x, v0, opts)
        c.i, c.k, c.t = i, k, float(t)
        if c.converged:
            prev = c.v
        cols.append(c)
    return cols


def _fallback_guess(sys, gen, x):
    return _default_guess(sys, gen, x) if x != 0.0 else np.zeros(sys.n)
