"""Linear moment matching with rational Krylov subspaces."""

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as la

from .linalg import DEFLATION_TOL, RankWarning, lu_factor, orthonormalize
from .systems import LinearSystem, Method, ReducedBasis, StructureError, _is_singular_lu


class ShiftError(ValueError):
    """A shift coincides (numerically) with an eigenvalue of the pencil."""


class ProjectionError(ValueError):
    """The reduced descriptor matrix ``W^T E V`` is singular."""


@dataclass(frozen=True, eq=False)
class ShiftSpec:
    """Interpolation data for rational Krylov construction.

    Parameters
    ----------
    shifts : sequence of complex
        Distinct expansion points. A complex shift contributes the real
        and imaginary parts of its directions; listing its conjugate as
        well is allowed and adds nothing.
    multiplicities : sequence of int, optional
        Number of moments per shift, default one each.
    tangential_dirs : sequence of vectors, optional
        One direction per shift. Without them the block subspace (all
        input columns) is used.
    """

    shifts: Sequence[complex]
    multiplicities: Optional[Sequence[int]] = None
    tangential_dirs: Optional[Sequence[np.ndarray]] = None

    def __post_init__(self):
        shifts = tuple(complex(s) for s in self.shifts)
        if not shifts:
            raise ValueError("at least one shift is required")
        if len(set(shifts)) != len(shifts):
            raise ValueError("shifts must be distinct")
        mult = self.multiplicities
        mult = (1,) * len(shifts) if mult is None else tuple(int(k) for k in mult)
        if len(mult) != len(shifts) or min(mult) < 1:
            raise ValueError("need one positive multiplicity per shift")
        dirs = self.tangential_dirs
        if dirs is not None:
            dirs = tuple(np.atleast_1d(np.asarray(d, dtype=complex)) for d in dirs)
            if len(dirs) != len(shifts):
                raise ValueError("need one tangential direction per shift")
        object.__setattr__(self, "shifts", shifts)
        object.__setattr__(self, "multiplicities", mult)
        object.__setattr__(self, "tangential_dirs", dirs)

    @property
    def order(self):
        """Total multiplicity ``sum r_i``."""
        return sum(self.multiplicities)

    def _effective(self):
        # drop conjugates of complex shifts already present
        seen = set()
        for i, s in enumerate(self.shifts):
            if s.imag != 0 and s.conjugate() in seen:
                continue
            seen.add(s)
            d = None if self.tangential_dirs is None else self.tangential_dirs[i]
            yield s, self.multiplicities[i], d


@dataclass(frozen=True)
class MomentSet:
    sigma: complex
    moments: list


def _factor(M, sigma):
    lu = lu_factor(M, check_finite=True)
    if _is_singular_lu(lu[0]):
        raise ShiftError(f"sigma*E - A is singular at sigma={sigma}")
    return lu


def moments(sys, sigma, count):
    """Moments ``m_0 .. m_{count-1}`` of ``G(s)`` about `sigma`.

    Uses ``m_i = (-1)^i C V_i`` with ``(sigma E - A) V_0 = B`` and
    ``(sigma E - A) V_i = E V_{i-1}``, factoring the shifted matrix once.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    sigma = complex(sigma)
    dtype = float if sigma.imag == 0 else complex
    s = sigma.real if dtype is float else sigma
    lu = _factor(s * sys.E - sys.A, sigma)
    Vi = la.lu_solve(lu, sys.B.astype(dtype))
    out = [sys.C @ Vi]
    for i in range(1, count):
        Vi = la.lu_solve(lu, sys.E @ Vi)
        out.append((-1) ** i * (sys.C @ Vi))
    return MomentSet(sigma, out)


def _raw_directions(op, rhs_mat, E, spec, transpose=False):
    """Raw Krylov directions with their Sylvester data.

    Returns ``(V_raw, S, R)`` real, with ``E V S - A V = B R`` for the
    input side (``S^T`` convention handled by the caller for the dual).
    """
    cols, S_blocks, R_blocks = [], [], []
    nin = rhs_mat.shape[1]
    for sigma, mult, d in spec._effective():
        is_real = sigma.imag == 0
        s = sigma.real if is_real else sigma
        M = s * E - op
        if transpose:
            M = M.T
        lu = _factor(M, sigma)
        if d is None:
            R0 = np.eye(nin, dtype=complex)
        else:
            if d.shape != (nin,):
                raise StructureError(f"tangential direction has length {d.size}, expected {nin}")
            R0 = d.reshape(-1, 1)
        k = R0.shape[1]
        rhs = rhs_mat @ R0
        if is_real:
            rhs = rhs.real
            R0 = R0.real
        Et = E.T if transpose else E
        blocks = [la.lu_solve(lu, rhs)]
        for _ in range(1, mult):
            blocks.append(la.lu_solve(lu, Et @ blocks[-1]))
        W = np.hstack(blocks)
        # Lemma-1 "modified" Jordan form: -I on the block superdiagonal
        Sc = np.kron(np.eye(mult), s * np.eye(k)) - np.kron(np.eye(mult, k=1), np.eye(k))
        Rc = np.hstack([R0] + [np.zeros_like(R0)] * (mult - 1))
        if is_real:
            cols.append(W)
            S_blocks.append(np.real(Sc))
            R_blocks.append(np.real(Rc))
        else:
            cols.append(np.hstack([W.real, W.imag]))
            S_blocks.append(np.block([[Sc.real, Sc.imag], [-Sc.imag, Sc.real]]))
            R_blocks.append(np.hstack([Rc.real, Rc.imag]))
    return np.hstack(cols), la.block_diag(*S_blocks), np.hstack(R_blocks)


def krylov_directions(sys, spec):
    """Raw (unorthogonalized) input Krylov directions and Sylvester data.

    Returns
    -------
    V_raw : (n, k) ndarray
    S_v : (k, k) ndarray
    R : (m, k) ndarray
        Satisfying ``E V_raw S_v - A V_raw = B R``.
    """
    return _raw_directions(sys.A, sys.B.astype(complex), sys.E, spec)


def output_krylov_directions(sys, spec):
    """Raw output Krylov directions, ``E^T W S_w^T - A^T W = C^T L``.

    Returns ``(W_raw, S_w^T, L)``.
    """
    return _raw_directions(sys.A, sys.C.T.astype(complex), sys.E, spec, transpose=True)


def _basis(raw, provenance, tol=DEFLATION_TOL):
    Q, _, kept = orthonormalize(raw, tol)
    if len(kept) < raw.shape[1]:
        warnings.warn(f"Krylov directions deflated from {raw.shape[1]} to rank {len(kept)}",
                      RankWarning, stacklevel=3)
    return ReducedBasis(Q, Method.KRYLOV, [provenance[j] for j in kept])


def krylov_basis(sys, spec):
    """Orthonormal basis of the input rational Krylov subspace."""
    raw, _, _ = krylov_directions(sys, spec)
    return _basis(raw, _column_provenance(spec, raw.shape[1], sys.m, "input"))


def output_krylov_basis(sys, spec):
    """Orthonormal basis of the output rational Krylov subspace."""
    raw, _, _ = output_krylov_directions(sys, spec)
    return _basis(raw, _column_provenance(spec, raw.shape[1], sys.p, "output"))


def _column_provenance(spec, k_total, width, side):
    prov = []
    for sigma, mult, d in spec._effective():
        k = width if d is None else 1
        parts = 1 if sigma.imag == 0 else 2
        for part in range(parts):
            for i in range(mult):
                for j in range(k):
                    tag = "" if parts == 1 else (".re" if part == 0 else ".im")
                    prov.append((f"{side}(sigma={sigma}{tag}, moment={i}, col={j})", None))
    assert len(prov) == k_total
    return prov


def _as_array(V):
    return V.V if isinstance(V, ReducedBasis) else np.asarray(V, dtype=float)


def sylvester_residual(sys, V, spec):
    """Relative residual of ``E V S_v - A V = B R`` for a basis of the span.

    The raw Krylov directions are mapped onto ``span(V)`` by least squares,
    ``M = argmin ||V M - V_raw||``, and the Sylvester equation is evaluated
    on ``V M`` with the spec's ``(S_v, R)``. This is zero exactly when the
    raw directions lie in ``span(V)``.
    """
    V = _as_array(V)
    if V.ndim != 2 or V.shape[0] != sys.n:
        raise StructureError(f"V has shape {V.shape}, expected {sys.n} rows")
    raw, S, R = krylov_directions(sys, spec)
    M = np.linalg.lstsq(V, raw, rcond=None)[0]
    Vm = V @ M
    BR = sys.B @ R
    res = sys.E @ Vm @ S - sys.A @ Vm - BR
    return float(np.linalg.norm(res) / np.linalg.norm(BR))


def dual_sylvester_residual(sys, W, spec):
    """Relative residual of ``E^T W S_w^T - A^T W = C^T L``."""
    W = _as_array(W)
    if W.ndim != 2 or W.shape[0] != sys.n:
        raise StructureError(f"W has shape {W.shape}, expected {sys.n} rows")
    raw, St, L = output_krylov_directions(sys, spec)
    M = np.linalg.lstsq(W, raw, rcond=None)[0]
    Wm = W @ M
    CL = sys.C.T @ L
    res = sys.E.T @ Wm @ St - sys.A.T @ Wm - CL
    return float(np.linalg.norm(res) / np.linalg.norm(CL))


def reduce_linear(sys, V, W=None):
    """Petrov-Galerkin reduction ``(W^T E V, W^T A V, W^T B, C V)``."""
    V = _as_array(V)
    W = V if W is None else _as_array(W)
    if V.shape[0] != sys.n or W.shape != V.shape:
        raise StructureError(f"projection shapes {V.shape}, {W.shape} do not fit n={sys.n}")
    Er = W.T @ sys.E @ V
    lu, _ = lu_factor(Er)
    # pivots measured against the scale of the factors, not of W^T E V itself
    scale = np.linalg.norm(W, 2) * np.linalg.norm(sys.E, 2) * np.linalg.norm(V, 2)
    if _is_singular_lu(lu) or np.abs(np.diag(lu)).min() <= 1e3 * np.finfo(float).eps * scale:
        raise ProjectionError("W^T E V is singular")
    return LinearSystem(Er, W.T @ sys.A @ V, W.T @ sys.B, sys.C @ V)


@dataclass(frozen=True)
class MomentReport:
    """Relative moment errors keyed by ``(shift, order)``."""

    errors: dict

    @property
    def max_error(self):
        return max(self.errors.values())

    def matched(self, tol=1e-8):
        return self.max_error <= tol


def check_moment_matching(fom, rom, spec, orders=None):
    """Compare FOM and ROM moments at every shift of `spec`.

    Parameters
    ----------
    orders : int, optional
        Number of moments compared per shift; default is each shift's
        multiplicity. Two-sided reductions match twice as many.
    """
    errors = {}
    for i, sigma in enumerate(spec.shifts):
        count = spec.multiplicities[i] if orders is None else orders
        mf = moments(fom, sigma, count).moments
        mr = moments(rom, sigma, count).moments
        d = None if spec.tangential_dirs is None else spec.tangential_dirs[i]
        for j in range(count):
            a, b = mf[j], mr[j]
            if d is not None:
                a, b = a @ d, b @ d
            scale = np.linalg.norm(a)
            err = np.linalg.norm(a - b)
            errors[(sigma, j)] = float(err / scale) if scale > 0 else float(err)
    return MomentReport(errors)


# -- plain-text coordinate matrix format --------------------------------------

def write_matrix(path, M):
    """Write a real matrix as ``rows cols`` then 1-based ``i j value`` lines."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows, cols = np.nonzero(M)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for i, j in zip(rows, cols):
            fh.write(f"{i + 1} {j + 1} {M[i, j]:.17g}\n")


def read_matrix(path):
    """Inverse of :func:`write_matrix`."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}:1: expected 'rows cols' header")
        M = np.zeros((int(header[0]), int(header[1])))
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'row col value'")
            M[int(parts[0]) - 1, int(parts[1]) - 1] = float(parts[2])
    return M
