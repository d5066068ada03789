"""Fixed-step implicit Euler integration and trajectory I/O."""

import collections
import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as la

from .linalg import lu_factor
from .systems import (CollocationGrid, LinearGenerator, LinearSystem, NonlinearGenerator,
                      ZeroGenerator, generator_maps)

# Number of integrations performed, keyed by "full", "reduced" and
# "generator". Used to check that NLMM never simulates the full model.
simulation_counts = collections.Counter()

OVERFLOW_GUARD = 1e12


class IntegrationError(RuntimeError):
    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class GeneratorDivergenceError(IntegrationError):
    pass


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples on a uniform time grid. Either field may be None after CSV import."""

    times: np.ndarray
    states: Optional[np.ndarray]
    outputs: Optional[np.ndarray]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("trajectory needs a 1-d time grid")
        if t.size > 1:
            d = np.diff(t)
            if d[0] <= 0 or not np.allclose(d, d[0], rtol=1e-9, atol=1e-12):
                raise ValueError("trajectory times must be uniform and increasing")
        for name in ("states", "outputs"):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.asarray(a, dtype=float)
            if a.ndim != 2 or a.shape[0] != t.size:
                raise ValueError(f"{name} has shape {a.shape}, expected ({t.size}, ·)")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite samples")
            object.__setattr__(self, name, a)
        object.__setattr__(self, "times", t)

    @property
    def h(self):
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def steps(self):
        return self.times.size - 1

    def to_csv(self, path, kind="outputs"):
        """Write ``t,y1..`` (``kind="outputs"``) or ``t,x1..`` (``"states"``)."""
        data, prefix = {"outputs": (self.outputs, "y"), "states": (self.states, "x")}[kind]
        if data is None:
            raise ValueError(f"trajectory has no {kind}")
        header = ["t"] + [f"{prefix}{j + 1}" for j in range(data.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, row in zip(self.times, data):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        if header[0] != "t" or len(header) < 2 or header[1][0] not in "xy":
            raise ValueError(f"{path}: header must be 't,x1..' or 't,y1..'")
        data = body[:, 1:]
        if header[1][0] == "x":
            return cls(body[:, 0], data, None)
        return cls(body[:, 0], None, data)


def _step_count(h, T):
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    if T < h:
        raise ValueError(f"horizon T={T} shorter than step h={h}")
    N = int(round(T / h))
    if abs(N * h - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"horizon T={T} is not a multiple of h={h}")
    return N


def implicit_euler(f, jac_f, u_of_t, x0, h, T, output=None, E=None, tol=1e-10, max_iter=50):
    """Integrate ``E x' = f(x, u(t))`` on ``[0, T]`` with implicit Euler.

    Each step solves ``E (x_{k+1} - x_k) - h f(x_{k+1}, u(t_{k+1})) = 0``
    by Newton's method, starting from ``x_k`` and refactoring
    ``E - h J_f`` at every iteration.

    Parameters
    ----------
    f, jac_f : callable
        Right-hand side and its state Jacobian, both ``(x, u) -> ...``.
    u_of_t : callable
        Input signal ``t -> u``.
    x0 : (n,) array_like
    h, T : float
        Step size and horizon; ``T`` must be a multiple of ``h``.
    output : callable, optional
        Output map ``x -> y``; defaults to the identity.
    E : (n, n) array_like, optional
        Descriptor matrix, identity if omitted.

    Raises
    ------
    IntegrationError
        If the inner Newton iteration fails at some step.
    """
    N = _step_count(h, T)
    x = np.array(x0, dtype=float)
    n = x.size
    M = np.eye(n) if E is None else np.asarray(E, dtype=float)
    output = output if output is not None else (lambda z: z)
    times = h * np.arange(N + 1)
    states = np.empty((N + 1, n))
    states[0] = x
    for k in range(N):
        t1 = times[k + 1]
        u = np.asarray(u_of_t(t1), dtype=float)
        xk = states[k]
        z = xk.copy()
        for _ in range(max_iter):
            G = M @ (z - xk) - h * np.asarray(f(z, u))
            if not np.all(np.isfinite(G)):
                raise IntegrationError(f"non-finite residual at step {k + 1}", k + 1, t1)
            if np.max(np.abs(G), initial=0.0) <= tol:
                break
            J = M - h * np.asarray(jac_f(z, u))
            dz = la.lu_solve(lu_factor(J, check_finite=False), -G)
            z = z + dz
            if np.max(np.abs(dz), initial=0.0) <= tol * (1.0 + np.max(np.abs(z), initial=0.0)):
                break
        else:
            raise IntegrationError(f"Newton did not converge at step {k + 1} (t={t1:g})", k + 1, t1)
        if not np.all(np.isfinite(z)):
            raise IntegrationError(f"non-finite state at step {k + 1}", k + 1, t1)
        states[k + 1] = z
    outputs = np.array([np.asarray(output(s), dtype=float) for s in states])
    return Trajectory(times, states, outputs)


def _system_maps(system):
    if isinstance(system, LinearSystem):
        A, B, C = system.A, system.B, system.C
        return (lambda x, u: A @ x + B @ u), (lambda x, u: A), (lambda x: C @ x), system.E
    return system.f, system.jac_f, system.h, system.E


def simulate(system, u_of_t, x0, h, T, **kwargs):
    """Integrate a full or reduced model and record the run in `simulation_counts`."""
    f, jac, out, E = _system_maps(system)
    key = "reduced" if getattr(system, "is_reduced", False) else "full"
    simulation_counts[key] += 1
    return implicit_euler(f, jac, u_of_t, x0, h, T, output=out, E=E, **kwargs)


# -- signal generators ---------------------------------------------------------

def _scalar_implicit_euler(s_v, x0, times, h_gen):
    """Implicit Euler for the scalar ODE ``x' = s_v(x)`` sampled at `times`."""
    out = np.empty(times.size)
    x, t = float(x0), 0.0
    for k, target in enumerate(times):
        while t < target - 1e-14:
            step = min(h_gen, target - t)
            z = x
            for _ in range(50):
                g = z - x - step * s_v(z)
                d = 1e-7 * (1.0 + abs(z))
                dg = 1.0 - step * (s_v(z + d) - s_v(z - d)) / (2 * d)
                dz = -g / dg
                z += dz
                if abs(dz) <= 1e-14 * (1.0 + abs(z)):
                    break
            else:
                # no real root of the step equation: the solution escapes
                # before the end of the substep
                if abs(z - x - step * s_v(z)) > 1e-10 * (1.0 + abs(z)):
                    raise GeneratorDivergenceError(
                        f"generator step equation has no solution at t={t + step:g}",
                        time=t + step)
            t += step
            if not math.isfinite(z) or abs(z) > OVERFLOW_GUARD:
                raise GeneratorDivergenceError(f"generator diverged at t={t:g}", time=t)
            x = z
        out[k] = x
    return out


def integrate_generator(gen, grid, h_gen=None):
    """Sample a nonlinear generator's scalar trajectory at the collocation times.

    Implicit Euler from ``t = 0`` with substep ``h_gen`` (default: a
    hundredth of the smallest spacing of ``{0} ∪ grid``), combined with a
    half-step run by Richardson extrapolation.

    Returns
    -------
    values : (K,) ndarray
    """
    if not isinstance(gen, NonlinearGenerator):
        raise TypeError("only nonlinear generators need integration")
    times = grid.times if isinstance(grid, CollocationGrid) else CollocationGrid(grid).times
    if times[0] < 0:
        raise ValueError("collocation times must be non-negative")
    simulation_counts["generator"] += 1
    pts = np.unique(np.concatenate([[0.0], times]))
    gaps = np.diff(pts)
    if gaps.size == 0:
        return np.full(times.size, gen.x0)
    if h_gen is None:
        h_gen = gaps.min() / 100.0
    coarse = _scalar_implicit_euler(gen.s_v, gen.x0, times, h_gen)
    fine = _scalar_implicit_euler(gen.s_v, gen.x0, times, h_gen / 2.0)
    return 2.0 * fine - coarse


# -- steady-state check -----------------------------------------------------------

def _generator_derivative(gen):
    s_v, r = generator_maps(gen)
    if isinstance(gen, LinearGenerator):
        return (lambda xi: gen.sigma), (lambda xi: gen.r_dir)
    if isinstance(gen, ZeroGenerator):
        return (lambda xi: 0.0), (lambda xi: gen.r_dir)

    def ds(xi):
        d = 1e-7 * (1.0 + abs(xi))
        return (s_v(xi + d) - s_v(xi - d)) / (2 * d)

    def dr(xi):
        d = 1e-7 * (1.0 + abs(xi))
        return (r(xi + d) - r(xi - d)) / (2 * d)

    return ds, dr


def interconnect(system, gen):
    """Couple a model with a signal generator into one autonomous system.

    The returned maps act on ``z = [x, xi]`` with ``xi`` the generator
    state, so a single implicit Euler run integrates both consistently.
    """
    f, jac, out, E = _system_maps(system)
    s_v, r = generator_maps(gen)
    ds, dr = _generator_derivative(gen)
    n = system.n
    if isinstance(system, LinearSystem):
        B = system.B
        dfdu = lambda x, u, du: B @ du  # noqa: E731
    else:
        def dfdu(x, u, du):
            eps = 1e-7 * (1.0 + np.max(np.abs(u), initial=0.0)) / max(np.linalg.norm(du), 1e-300)
            return (np.asarray(f(x, u + eps * du)) - np.asarray(f(x, u - eps * du))) / (2 * eps)

    def f_aug(z, _u):
        x, xi = z[:n], z[n]
        return np.concatenate([f(x, r(xi)), [s_v(xi)]])

    def jac_aug(z, _u):
        x, xi = z[:n], z[n]
        u = r(xi)
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = jac(x, u)
        J[:n, n] = dfdu(x, u, dr(xi))
        J[n, n] = ds(xi)
        return J

    E_aug = None if E is None else la.block_diag(E, [[1.0]])
    return f_aug, jac_aug, (lambda z: out(z[:n])), E_aug


def steady_state_match_check(fom, rom, gen, V, horizon, h, W=None, x0=None):
    """Largest output deviation between FOM and ROM driven by a generator.

    The FOM starts at ``x0 = v * xi0`` where ``v`` solves the generator's
    column equation at ``t = 0`` (unless `x0` is given), the ROM at
    ``(W^T E V)^{-1} W^T E x0``. Both run interconnected with the generator.

    Parameters
    ----------
    fom : LinearSystem or NonlinearSystem
    rom : LinearSystem or ReducedNonlinearSystem
    gen : generator
    V : ReducedBasis or (n, r) ndarray
        Basis used to build `rom`.
    horizon, h : float
    W : optional
        Left basis for two-sided linear ROMs.

    Returns
    -------
    float
        ``max_t ||y(t) - y_r(t)||_inf``.
    """
    Vm = V.V if hasattr(V, "V") else np.asarray(V, dtype=float)
    Wm = Vm if W is None else (W.V if hasattr(W, "V") else np.asarray(W, dtype=float))
    if x0 is None:
        x0 = _column_solution(fom, gen) * gen.x0
    E = fom.E if isinstance(fom, LinearSystem) else fom.mass
    xr0 = np.linalg.solve(Wm.T @ E @ Vm, Wm.T @ (E @ x0))

    results = []
    for system, init in ((fom, x0), (rom, xr0)):
        f_aug, jac_aug, out, E_aug = interconnect(system, gen)
        z0 = np.concatenate([init, [gen.x0]])
        key = "reduced" if (system is rom) else "full"
        simulation_counts[key] += 1
        traj = implicit_euler(f_aug, jac_aug, lambda t: None, z0, h, horizon,
                              output=out, E=E_aug)
        results.append(traj.outputs)
    return float(np.max(np.abs(results[0] - results[1])))


def _column_solution(fom, gen):
    from .core import NlmmOptions, solve_column

    if isinstance(fom, LinearSystem) and isinstance(gen, (LinearGenerator, ZeroGenerator)):
        sigma = gen.sigma if isinstance(gen, LinearGenerator) else 0.0
        return np.linalg.solve(sigma * fom.E - fom.A, fom.B @ gen.r_dir)
    sys = fom.as_nonlinear() if isinstance(fom, LinearSystem) else fom
    col = solve_column(sys, gen, gen.x0, None, NlmmOptions())
    if not col.converged:
        raise IntegrationError("could not solve the generator column equation at t=0")
    return col.v
