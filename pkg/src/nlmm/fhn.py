"""FitzHugh-Nagumo benchmark.

Finite-difference discretization of

    eps v_t = eps^2 v_zz + v (v - 0.1)(1 - v) - w + g
        w_t = b v - gamma w + g

on ``z in [0, L]`` with ``v_z(0, t) = -i0(t)``, ``v_z(L, t) = 0``,
written as ``E x' = A x + f~(x) + B u`` with ``x = [v, w]`` and
``u = [i0, 1]``. The diagonal ``E`` is folded into the right-hand side.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .systems import LinearSystem, NonlinearGenerator, NonlinearSystem

CUBIC_ROOT = 0.1


@dataclass(frozen=True)
class FhnParams:
    ell: int = 100
    length: float = 1.0
    epsilon: float = 0.015
    b: float = 0.5
    gamma: float = 2.0
    g: float = 0.05

    def __post_init__(self):
        if int(self.ell) < 2:
            raise ValueError("need at least two spatial elements")
        for name in ("length", "epsilon", "b", "gamma", "g"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val <= 0:
                raise ValueError(f"{name} must be finite and positive, got {val}")

    @classmethod
    def from_mapping(cls, d):
        kw = {}
        for key, typ in (("ell", int), ("length", float), ("epsilon", float),
                         ("b", float), ("gamma", float), ("g", float)):
            if key in d:
                kw[key] = typ(d[key])
        return cls(**kw)

    def as_dict(self):
        return asdict(self)


def cubic(v):
    """``v (v - 0.1)(1 - v)``."""
    return v * (v - CUBIC_ROOT) * (1.0 - v)


def cubic_derivative(v):
    return -3.0 * v**2 + 2.0 * (1.0 + CUBIC_ROOT) * v - CUBIC_ROOT


def _matrices(params):
    ell, eps = params.ell, params.epsilon
    dz = params.length / (ell - 1)
    # second difference with ghost nodes for the Neumann conditions
    D = (np.diag(-2.0 * np.ones(ell)) + np.diag(np.ones(ell - 1), 1)
         + np.diag(np.ones(ell - 1), -1))
    D[0, 1] = 2.0
    D[-1, -2] = 2.0
    D /= dz**2
    I = np.eye(ell)
    E = np.diag(np.concatenate([eps * np.ones(ell), np.ones(ell)]))
    A = np.block([[eps**2 * D, -I], [params.b * I, -params.gamma * I]])
    B = np.zeros((2 * ell, 2))
    B[0, 0] = 2.0 * eps**2 / dz
    B[:, 1] = params.g
    C = np.zeros((2, 2 * ell))
    C[0, 0] = 1.0
    C[1, ell] = 1.0
    return E, A, B, C


def build_fhn(params=None):
    """Explicit FHN model ``x' = E^{-1}(A x + f~(x) + B u)``, ``y = [v_1, w_1]``.

    The returned system carries its linearization about the origin for
    initial guesses.
    """
    params = params or FhnParams()
    ell = params.ell
    E, A, B, C = _matrices(params)
    einv = 1.0 / np.diag(E)
    A_e = einv[:, None] * A
    B_e = einv[:, None] * B
    einv_v = einv[:ell]

    def f(x, u):
        out = A_e @ x + B_e @ u
        out[:ell] += einv_v * cubic(x[:ell])
        return out

    def jac_f(x, u):
        J = A_e.copy()
        idx = np.arange(ell)
        J[idx, idx] += einv_v * cubic_derivative(x[:ell])
        return J

    def h(x):
        return C @ x

    A_lin = A_e.copy()
    A_lin[np.arange(ell), np.arange(ell)] += einv_v * cubic_derivative(0.0)
    lin = LinearSystem(np.eye(2 * ell), A_lin, B_e, C)
    return NonlinearSystem(n=2 * ell, m=2, p=2, f=f, jac_f=jac_f, h=h, linearization=lin)


def test_input(t):
    """``[5e4 t^3 exp(-15 t), 1]``."""
    return np.array([5e4 * t**3 * np.exp(-15.0 * t), 1.0])


test_input.__test__ = False  # not a pytest test despite the name


def paper_generator():
    """Affine training generator ``x' = x + 0.3``, ``u = [x, 1]``, ``x0 = -0.29``.

    ``s_v(0) != 0`` and ``r(0) != 0`` here, so construction emits a
    :class:`~nlmm.systems.GeneratorAssumptionWarning`.
    """
    x0 = -0.29
    return NonlinearGenerator(
        s_v=lambda x: x + 0.3,
        r=lambda x: np.array([x, 1.0]),
        x0=x0,
        solution=lambda t: np.exp(t) * x0 + 0.3 * (np.exp(t) - 1.0),
        label="affine(x'=x+0.3, u=[x,1])",
    )


def relative_l1_error(y_fom, y_rom, per_channel=False):
    """Relative discrete L1-in-time error between two output histories.

    Accepts :class:`~nlmm.integrate.Trajectory` objects (grids are checked)
    or ``(K, p)`` arrays sampled on the same uniform grid. By default the
    sums run over all channels jointly; ``per_channel=True`` returns the
    largest per-channel ratio instead.
    """
    if hasattr(y_fom, "times") and hasattr(y_rom, "times"):
        if y_fom.times.shape != y_rom.times.shape or not np.allclose(y_fom.times, y_rom.times):
            raise ValueError("trajectories are sampled on different time grids")
        y_fom, y_rom = y_fom.outputs, y_rom.outputs
    a = np.asarray(y_fom, dtype=float)
    b = np.asarray(y_rom, dtype=float)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if a.shape != b.shape:
        raise ValueError(f"output shapes differ: {a.shape} vs {b.shape}")
    # uniform step cancels in the ratio
    diff = np.abs(a - b)
    ref = np.abs(a)
    if per_channel:
        return float(np.max(diff.sum(axis=0) / ref.sum(axis=0)))
    return float(diff.sum() / ref.sum())


def section_crossings(traj, t_min=2.0, level=None):
    """Times at which ``v_1`` crosses a Poincare section upwards after `t_min`.

    The section is ``v_1 = level``, by default the midpoint of the range of
    ``v_1`` over ``t > t_min``. Two or more crossings indicate a
    sustained oscillation.
    """
    t = traj.times
    mask = t > t_min
    v = traj.outputs[mask, 0]
    if v.size < 2:
        return np.empty(0)
    if level is None:
        level = 0.5 * (v.max() + v.min())
    idx = np.flatnonzero((v[:-1] < level) & (v[1:] >= level))
    return t[mask][idx + 1]
