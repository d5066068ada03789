"""One-sided Galerkin reduction of nonlinear models."""

import numpy as np

from .linalg import orthonormality_error
from .systems import ORTHONORMALITY_TOL, ReducedBasis, StructureError


def _basis_matrix(V):
    return V.V if isinstance(V, ReducedBasis) else np.asarray(V, dtype=float)


def lift(x_r, V):
    """``V x_r``."""
    V = _basis_matrix(V)
    x_r = np.asarray(x_r, dtype=float)
    if x_r.shape[0] != V.shape[1]:
        raise StructureError(f"reduced state has length {x_r.shape[0]}, basis has {V.shape[1]} columns")
    return V @ x_r


def project(x, V):
    """``V^T x``."""
    V = _basis_matrix(V)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != V.shape[0]:
        raise StructureError(f"state has length {x.shape[0]}, basis has {V.shape[0]} rows")
    return V.T @ x


class ReducedNonlinearSystem:
    """Galerkin ROM ``E_r x_r' = V^T f(V x_r, u)``, ``y_r = h(V x_r)``.

    Behaves like a :class:`~nlmm.systems.NonlinearSystem` of dimension
    ``r`` (attributes ``n``, ``m``, ``p``, ``f``, ``jac_f``, ``h``, ``E``)
    so the same integrator applies. The nonlinearity is evaluated at full
    dimension on every call.
    """

    is_reduced = True

    def __init__(self, full, V):
        self.full = full
        self.V = V
        self.r = self.n = V.shape[1]
        self.m = full.m
        self.p = full.p
        self.E = None if full.E is None else V.T @ full.E @ V
        self.linearization = None

    def f(self, x_r, u):
        return self.V.T @ self.full.f(self.V @ x_r, u)

    def jac_f(self, x_r, u):
        return self.V.T @ (self.full.jac_f(self.V @ x_r, u) @ self.V)

    def h(self, x_r):
        return self.full.h(self.V @ x_r)

    @property
    def mass(self):
        return np.eye(self.r) if self.E is None else self.E

    def project(self, x):
        """Initial condition ``x_r0 = (V^T E V)^{-1} V^T E x``; ``V^T x`` when E = I."""
        if self.full.E is None:
            return self.V.T @ x
        return np.linalg.solve(self.E, self.V.T @ (self.full.E @ x))

    def lift(self, x_r):
        return self.V @ x_r

    def linearization_eigenvalues(self, u=None):
        """Eigenvalues of the ROM linearized at the origin (diagnostic only)."""
        u = np.zeros(self.m) if u is None else u
        J = self.jac_f(np.zeros(self.r), u)
        if self.E is not None:
            J = np.linalg.solve(self.E, J)
        return np.linalg.eigvals(J)


def reduce_nonlinear(sys, V):
    """Galerkin projection of `sys` onto an orthonormal basis."""
    Vm = _basis_matrix(V)
    if Vm.ndim != 2 or Vm.shape[0] != sys.n or Vm.shape[1] > sys.n:
        raise StructureError(f"basis shape {Vm.shape} does not fit n={sys.n}")
    err = orthonormality_error(Vm)
    if err > ORTHONORMALITY_TOL:
        raise ValueError(f"basis is not orthonormal (error {err:.3e})")
    return ReducedNonlinearSystem(sys, Vm)
